//! The time-unaware comparison model: trained for one fixed step `step_millis`
//! and rolled out by feeding each prediction back as the next input.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{DisplacementFilter, DEFAULT_FPS};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::{ModelConfig, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Displacement the network is trained for, one frame interval by default.
    pub step_millis: f64,
    /// Geometry with the time branch removed.
    pub model: ModelConfig,
}

impl BaselineConfig {
    /// Baseline matching `model` with the time branch deleted and one step of
    /// `1000 / fps` ms.
    pub fn for_model(model: &ModelConfig, fps: f64) -> Result<Self> {
        let config = Self { step_millis: 1000.0 / fps, model: model.clone().without_time_branch() };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_millis.is_finite() && self.step_millis > 0.0) {
            return Err(Error::Config(format!("baseline step must be positive, got {} ms", self.step_millis)));
        }
        if self.model.has_time_branch() {
            return Err(Error::Config("baseline geometry must not have a time branch".into()));
        }
        self.model.validate()
    }

    /// Training tuples are restricted to exactly one step.
    pub fn displacement_filter(&self) -> DisplacementFilter {
        DisplacementFilter::Exactly(self.step_millis)
    }

    /// Nominal displacement reached after `k` rollout steps.
    pub fn horizon_millis(&self, k: usize) -> f64 {
        k as f64 * self.step_millis
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { step_millis: 1000.0 / DEFAULT_FPS, model: ModelConfig::default().without_time_branch() }
    }
}

/// Predictions at `t0 + j * step` for `j = 1..=k`, each obtained from the
/// previous one by a single forward pass.
pub fn rollout<T: Float>(network: &Network<T>, frame: &Frame, k: usize) -> Result<Vec<Frame>> {
    if k == 0 {
        return Err(Error::Domain("rollout length must be at least 1".into()));
    }
    if network.has_time_branch() {
        return Err(Error::ModelKind("rollout needs a baseline network without a time branch".into()));
    }
    let mut frames: Vec<Frame> = Vec::with_capacity(k);
    for _ in 0..k {
        let input = frames.last().unwrap_or(frame);
        let next = network.predict_untimed(input)?;
        frames.push(next);
    }
    Ok(frames)
}
