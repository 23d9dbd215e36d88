//! Layer-by-layer geometry derived from a [`ModelConfig`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::ModelConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Leading offset: tap `k` of output `o` reads input `o * stride + k - pad`
    /// (convolution) or writes output `i * stride + k - pad` (transpose).
    pub pad: usize,
    pub in_size: (usize, usize),
    pub out_size: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvGeometry),
    TransposeConv(ConvGeometry),
    Dense { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub activation: Activation,
    pub dropout: bool,
}

impl LayerSpec {
    /// Weight tensor shape: `[out, in, k, k]` for convolutions, `[in, out, k, k]`
    /// for transpose convolutions and `[out, in]` for dense layers.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv(g) => vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
            LayerKind::TransposeConv(g) => vec![g.in_channels, g.out_channels, g.kernel, g.kernel],
            LayerKind::Dense { inputs, outputs } => vec![outputs, inputs],
        }
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) | LayerKind::TransposeConv(g) => g.out_channels,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }

    pub fn input_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) | LayerKind::TransposeConv(g) => g.in_channels * g.in_size.0 * g.in_size.1,
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }

    pub fn output_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) | LayerKind::TransposeConv(g) => g.out_channels * g.out_size.0 * g.out_size.1,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }

    /// Number of inputs feeding one output unit, for initialization scaling.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) => g.in_channels * g.kernel * g.kernel,
            LayerKind::TransposeConv(g) => {
                let taps = g.kernel.div_ceil(g.stride);
                (g.in_channels * taps * taps).max(1)
            }
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }
}

/// The three layer chains of the network in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub image: Vec<LayerSpec>,
    pub time: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

fn same_conv(in_channels: usize, out_channels: usize, kernel: usize, size: (usize, usize)) -> ConvGeometry {
    ConvGeometry {
        in_channels,
        out_channels,
        kernel,
        stride: 1,
        pad: (kernel - 1) / 2,
        in_size: size,
        out_size: size,
    }
}

impl Architecture {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let sizes = config.encoder_spatial_sizes();
        let stages = config.encoder_channels.len();

        let mut image = Vec::new();
        let mut channels = 1;
        for (stage, (&out, &kernel)) in config.encoder_channels.iter().zip(&config.encoder_kernel_schedule).enumerate() {
            image.push(LayerSpec {
                name: format!("image.conv{stage}"),
                kind: LayerKind::Conv(same_conv(channels, out, kernel, sizes[stage])),
                activation: Activation::Relu,
                dropout: false,
            });
            image.push(LayerSpec {
                name: format!("image.pool{stage}"),
                kind: LayerKind::Conv(ConvGeometry {
                    in_channels: out,
                    out_channels: out,
                    kernel: 2,
                    stride: 2,
                    pad: 0,
                    in_size: sizes[stage],
                    out_size: sizes[stage + 1],
                }),
                activation: Activation::Relu,
                dropout: false,
            });
            channels = out;
        }
        image.push(LayerSpec {
            name: format!("image.conv{stages}"),
            kind: LayerKind::Conv(same_conv(
                channels,
                config.bottleneck_channels,
                config.encoder_kernel_schedule[stages],
                sizes[stages],
            )),
            activation: Activation::Relu,
            dropout: false,
        });
        let mut width = config.flattened_size();
        let trainable_fc = if config.flatten_is_first_fc {
            &config.encoder_fc_sizes[1..]
        } else {
            &config.encoder_fc_sizes[..]
        };
        for (index, &outputs) in trainable_fc.iter().enumerate() {
            image.push(dense(format!("image.fc{index}"), width, outputs, true));
            width = outputs;
        }

        let mut time = Vec::new();
        let mut width = 1;
        for (index, &outputs) in config.time_branch_fc_sizes.iter().enumerate() {
            time.push(dense(format!("time.fc{index}"), width, outputs, false));
            width = outputs;
        }

        let mut decoder = Vec::new();
        let mut width = config.embedding_size();
        for (index, &outputs) in config.decoder_fc_sizes.iter().enumerate() {
            decoder.push(dense(format!("decoder.fc{index}"), width, outputs, true));
            width = outputs;
        }
        let mut channels = config.bottleneck_channels;
        for stage in 0..stages {
            let from = sizes[stages - stage];
            let to = sizes[stages - stage - 1];
            decoder.push(LayerSpec {
                name: format!("decoder.unpool{stage}"),
                kind: LayerKind::TransposeConv(ConvGeometry {
                    in_channels: channels,
                    out_channels: channels,
                    kernel: 2,
                    stride: 2,
                    pad: 0,
                    in_size: from,
                    out_size: to,
                }),
                activation: Activation::Relu,
                dropout: false,
            });
            let out = config.decoder_channels[stage];
            let last = stage + 1 == stages;
            decoder.push(LayerSpec {
                name: format!("decoder.deconv{stage}"),
                kind: LayerKind::TransposeConv(same_conv(channels, out, config.decoder_kernel_schedule[stage], to)),
                activation: if last { Activation::Sigmoid } else { Activation::Relu },
                dropout: false,
            });
            channels = out;
        }

        Ok(Self { image, time, decoder })
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.image.iter().chain(&self.time).chain(&self.decoder)
    }
}

fn dense(name: String, inputs: usize, outputs: usize, dropout: bool) -> LayerSpec {
    LayerSpec { name, kind: LayerKind::Dense { inputs, outputs }, activation: Activation::Relu, dropout }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_sizes(layers: &[LayerSpec]) -> Vec<((usize, usize), usize)> {
        layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv(g) | LayerKind::TransposeConv(g) => Some((g.out_size, g.out_channels)),
                LayerKind::Dense { .. } => None,
            })
            .collect()
    }

    #[test]
    fn default_geometry_matches_layer_counts() {
        let arch = Architecture::from_config(&ModelConfig::default()).unwrap();
        let convs = arch.image.iter().filter(|l| l.name.contains("conv")).count();
        let pools = arch.image.iter().filter(|l| l.name.contains("pool")).count();
        assert_eq!((convs, pools), (4, 3));
        assert_eq!(
            conv_sizes(&arch.image),
            vec![
                ((120, 120), 32),
                ((60, 60), 32),
                ((60, 60), 64),
                ((30, 30), 64),
                ((30, 30), 128),
                ((15, 15), 128),
                ((15, 15), 32),
            ]
        );
        assert_eq!(arch.image.last().unwrap().kind, LayerKind::Dense { inputs: 7200, outputs: 4096 });
        assert_eq!(arch.time.len(), 4);
        assert!(arch.time.iter().all(|l| l.output_len() == 64));

        let fc: Vec<_> = arch.decoder.iter().filter(|l| matches!(l.kind, LayerKind::Dense { .. })).collect();
        assert_eq!(fc[0].kind, LayerKind::Dense { inputs: 4160, outputs: 4096 });
        assert_eq!(fc[1].kind, LayerKind::Dense { inputs: 4096, outputs: 7200 });
        assert_eq!(
            conv_sizes(&arch.decoder),
            vec![
                ((30, 30), 32),
                ((30, 30), 64),
                ((60, 60), 64),
                ((60, 60), 32),
                ((120, 120), 32),
                ((120, 120), 1),
            ]
        );
        assert_eq!(arch.decoder.last().unwrap().activation, Activation::Sigmoid);
    }

    #[test]
    fn odd_bottleneck_is_mirrored() {
        let arch = Architecture::from_config(&ModelConfig::half_resolution()).unwrap();
        let up: Vec<_> = conv_sizes(&arch.decoder).into_iter().map(|(s, _)| s.0).collect();
        assert_eq!(up, vec![15, 15, 30, 30, 60, 60]);
    }

    #[test]
    fn dense_dropout_only() {
        let arch = Architecture::from_config(&ModelConfig::default()).unwrap();
        for layer in arch.layers() {
            let is_dense = matches!(layer.kind, LayerKind::Dense { .. });
            let is_time = layer.name.starts_with("time.");
            assert_eq!(layer.dropout, is_dense && !is_time, "{}", layer.name);
        }
    }

    #[test]
    fn unflattened_variant_adds_projection() {
        let config = ModelConfig { flatten_is_first_fc: false, ..ModelConfig::default() };
        let arch = Architecture::from_config(&config).unwrap();
        let fc: Vec<_> = arch.image.iter().filter_map(|l| match l.kind {
            LayerKind::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        }).collect();
        assert_eq!(fc, vec![(7200, 7200), (7200, 4096)]);
    }
}
