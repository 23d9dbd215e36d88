use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saturating map applied to the last decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
}

/// Architectural hyperparameters of the two-branch encoder and the decoder.
///
/// The image branch runs one "same"-padded convolution per entry of
/// `encoder_channels`, each followed by a 2x2 stride-2 convolution that
/// halves the resolution, and then a final projection convolution onto
/// `bottleneck_channels` maps. The decoder mirrors the spatial path with
/// stride-2 transpose convolutions ("unpooling") interleaved with stride-1
/// transpose convolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `(height, width)` of input and output frames.
    pub input_resolution: (usize, usize),
    pub encoder_channels: Vec<usize>,
    /// Square kernel sides, one per encoder convolution including the
    /// trailing projection (`encoder_channels.len() + 1` entries).
    pub encoder_kernel_schedule: Vec<usize>,
    /// Channel count produced by the projection convolution.
    pub bottleneck_channels: usize,
    pub encoder_fc_sizes: Vec<usize>,
    /// When set, `encoder_fc_sizes[0]` is the flattened bottleneck map rather
    /// than a trainable projection of it.
    pub flatten_is_first_fc: bool,
    /// Widths of the time branch. Empty for the time-unaware baseline.
    pub time_branch_fc_sizes: Vec<usize>,
    /// Multiplier from milliseconds to the scalar fed into the time branch.
    pub time_input_scale: f64,
    pub decoder_fc_sizes: Vec<usize>,
    /// Output channels of each stride-1 transpose convolution; the last is 1.
    pub decoder_channels: Vec<usize>,
    pub decoder_kernel_schedule: Vec<usize>,
    pub dropout_keep_probability: f64,
    pub output_activation: OutputActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_resolution: (120, 120),
            encoder_channels: vec![32, 64, 128],
            encoder_kernel_schedule: vec![5, 5, 2, 1],
            bottleneck_channels: 32,
            encoder_fc_sizes: vec![7200, 4096],
            flatten_is_first_fc: true,
            time_branch_fc_sizes: vec![64, 64, 64, 64],
            time_input_scale: 1e-3,
            decoder_fc_sizes: vec![4096, 7200],
            decoder_channels: vec![64, 32, 1],
            decoder_kernel_schedule: vec![2, 5, 5],
            dropout_keep_probability: 0.8,
            output_activation: OutputActivation::Sigmoid,
        }
    }
}

impl ModelConfig {
    /// 60x60 input; the bottleneck map is 7x7 after floor halving.
    pub fn half_resolution() -> Self {
        Self {
            input_resolution: (60, 60),
            encoder_channels: vec![16, 32, 64],
            bottleneck_channels: 32,
            encoder_fc_sizes: vec![7 * 7 * 32, 1024],
            time_branch_fc_sizes: vec![32, 32, 32, 32],
            decoder_fc_sizes: vec![1024, 7 * 7 * 32],
            decoder_channels: vec![32, 16, 1],
            ..Self::default()
        }
    }

    /// A narrow network for 64x64 synthetic corpora that trains on a CPU.
    pub fn reduced_64() -> Self {
        Self {
            input_resolution: (64, 64),
            encoder_channels: vec![4, 8, 8],
            bottleneck_channels: 8,
            encoder_fc_sizes: vec![8 * 8 * 8, 128],
            time_branch_fc_sizes: vec![16, 16, 16, 16],
            decoder_fc_sizes: vec![128, 8 * 8 * 8],
            decoder_channels: vec![8, 4, 1],
            ..Self::default()
        }
    }

    /// The smallest configuration used for finite-difference gradient checks.
    pub fn miniature() -> Self {
        Self {
            input_resolution: (16, 16),
            encoder_channels: vec![2, 2, 2],
            bottleneck_channels: 8,
            encoder_fc_sizes: vec![32, 16],
            time_branch_fc_sizes: vec![4, 4],
            decoder_fc_sizes: vec![16, 32],
            decoder_channels: vec![2, 2, 1],
            ..Self::default()
        }
    }

    /// Same geometry with the time branch removed.
    pub fn without_time_branch(mut self) -> Self {
        self.time_branch_fc_sizes.clear();
        self
    }

    pub fn has_time_branch(&self) -> bool {
        !self.time_branch_fc_sizes.is_empty()
    }

    pub fn image_embedding_size(&self) -> usize {
        self.encoder_fc_sizes.last().copied().unwrap_or(0)
    }

    pub fn time_embedding_size(&self) -> usize {
        self.time_branch_fc_sizes.last().copied().unwrap_or(0)
    }

    pub fn embedding_size(&self) -> usize {
        self.image_embedding_size() + self.time_embedding_size()
    }

    /// Spatial size after each encoder stage, starting with the input.
    pub fn encoder_spatial_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.encoder_channels.len() + 1);
        let mut size = self.input_resolution;
        sizes.push(size);
        for _ in &self.encoder_channels {
            size = (size.0 / 2, size.1 / 2);
            sizes.push(size);
        }
        sizes
    }

    pub fn bottleneck_resolution(&self) -> (usize, usize) {
        *self.encoder_spatial_sizes().last().expect("input size is always present")
    }

    /// Width of the flattened bottleneck feature map.
    pub fn flattened_size(&self) -> usize {
        let (h, w) = self.bottleneck_resolution();
        h * w * self.bottleneck_channels
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        let (h, w) = self.input_resolution;
        let stages = self.encoder_channels.len();
        if stages == 0 {
            return fail("encoder needs at least one convolution stage".into());
        }
        let (bh, bw) = self.bottleneck_resolution();
        if h == 0 || w == 0 || bh == 0 || bw == 0 {
            return fail(format!(
                "input {h}x{w} cannot be halved {stages} times (bottleneck {bh}x{bw})"
            ));
        }
        if self.encoder_kernel_schedule.len() != stages + 1 {
            return fail(format!(
                "encoder kernel schedule needs {} entries, got {}",
                stages + 1,
                self.encoder_kernel_schedule.len()
            ));
        }
        if self.decoder_channels.len() != stages || self.decoder_kernel_schedule.len() != stages {
            return fail(format!(
                "decoder must mirror the {stages} encoder stages (channels {}, kernels {})",
                self.decoder_channels.len(),
                self.decoder_kernel_schedule.len()
            ));
        }
        if self.decoder_channels.last() != Some(&1) {
            return fail("decoder must end with a single output channel".into());
        }
        let widths = self
            .encoder_channels
            .iter()
            .chain(&self.encoder_kernel_schedule)
            .chain(&self.encoder_fc_sizes)
            .chain(&self.time_branch_fc_sizes)
            .chain(&self.decoder_fc_sizes)
            .chain(&self.decoder_channels)
            .chain(&self.decoder_kernel_schedule)
            .chain(core::iter::once(&self.bottleneck_channels));
        if widths.clone().any(|&v| v == 0) {
            return fail("all widths, channel counts and kernel sides must be positive".into());
        }
        let flat = self.flattened_size();
        if self.flatten_is_first_fc {
            if self.encoder_fc_sizes.len() < 2 {
                return fail("with a flattened first FC layer the encoder needs a second FC width".into());
            }
            if self.encoder_fc_sizes[0] != flat {
                return fail(format!(
                    "first encoder FC width {} must equal the flattened {bh}x{bw}x{} map ({flat})",
                    self.encoder_fc_sizes[0], self.bottleneck_channels
                ));
            }
        } else if self.encoder_fc_sizes.is_empty() {
            return fail("encoder needs at least one FC layer".into());
        }
        if self.decoder_fc_sizes.last() != Some(&flat) {
            return fail(format!(
                "last decoder FC width must reshape onto the {bh}x{bw}x{} map ({flat})",
                self.bottleneck_channels
            ));
        }
        if !(self.dropout_keep_probability > 0.0 && self.dropout_keep_probability <= 1.0) {
            return fail(format!(
                "dropout keep probability must lie in (0, 1], got {}",
                self.dropout_keep_probability
            ));
        }
        if !(self.time_input_scale.is_finite() && self.time_input_scale > 0.0) {
            return fail(format!("time input scale must be positive, got {}", self.time_input_scale));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_embedding_is_4160() {
        let config = ModelConfig::default();
        config.validate().unwrap();
        assert_eq!(config.image_embedding_size(), 4096);
        assert_eq!(config.time_embedding_size(), 64);
        assert_eq!(config.embedding_size(), 4160);
        assert_eq!(config.flattened_size(), 7200);
    }

    #[test]
    fn spatial_schedules() {
        assert_eq!(
            ModelConfig::default().encoder_spatial_sizes(),
            vec![(120, 120), (60, 60), (30, 30), (15, 15)]
        );
        // floor halving of 15 gives 7
        assert_eq!(
            ModelConfig::half_resolution().encoder_spatial_sizes(),
            vec![(60, 60), (30, 30), (15, 15), (7, 7)]
        );
    }

    #[test]
    fn presets_validate() {
        for config in [
            ModelConfig::default(),
            ModelConfig::half_resolution(),
            ModelConfig::reduced_64(),
            ModelConfig::miniature(),
            ModelConfig::reduced_64().without_time_branch(),
        ] {
            config.validate().unwrap();
        }
    }

    #[test]
    fn rejects_inconsistent_flatten() {
        let config = ModelConfig { encoder_fc_sizes: vec![28800, 4096], ..ModelConfig::default() };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
        let config = ModelConfig { flatten_is_first_fc: false, encoder_fc_sizes: vec![7200, 4096], ..ModelConfig::default() };
        config.validate().unwrap();
    }

    #[test]
    fn rejects_bad_dropout_and_mirror() {
        let config = ModelConfig { dropout_keep_probability: 0.0, ..ModelConfig::default() };
        assert!(config.validate().is_err());
        let config = ModelConfig { decoder_channels: vec![64, 1], ..ModelConfig::default() };
        assert!(config.validate().is_err());
        let config = ModelConfig { input_resolution: (4, 4), ..ModelConfig::miniature() };
        assert!(config.validate().is_err());
    }
}
