//! Masked MSE on dilated Canny edges of the groundtruth, and report
//! aggregation per action and per displacement.

use alloc::format;

use num_traits::Float;

use crate::baseline::rollout;
use crate::data::{DisplacementFilter, SplitSide, SplitSpec, TupleSampler, VideoCorpus};
use crate::data::ActionSegment;
use crate::error::{Error, Result};
use crate::frame::{Frame, TemporalDisplacement};
use crate::model::Network;

pub mod canny;
mod mask;
mod report;

pub use mask::{edge_map, edge_mask, masked_mse, score, EvalMask, EvalSettings};
pub use report::{
    average_of_action_means, ExcludedSample, GroupMean, MetricReport, ReportBuilder, SampleRecord, SCALE_255_SQUARED,
};

/// How a network reaches a displacement.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'n, T: Float> {
    /// One forward pass with `dt` fed to the time branch.
    Timed(&'n Network<T>),
    /// `dt / step_millis` passes of a baseline network.
    Rollout { network: &'n Network<T>, step_millis: f64 },
}

impl<T: Float> Predictor<'_, T> {
    pub fn predict(&self, frame: &Frame, dt_ms: f64) -> Result<Frame> {
        match *self {
            Predictor::Timed(network) => network.predict(frame, TemporalDisplacement::from_millis(dt_ms)?),
            Predictor::Rollout { network, step_millis } => {
                let k = rollout_steps(dt_ms, step_millis)?;
                let mut frames = rollout(network, frame, k)?;
                Ok(frames.pop().expect("k >= 1"))
            }
        }
    }
}

/// Whole number of baseline steps that reach `dt_ms`.
pub fn rollout_steps(dt_ms: f64, step_millis: f64) -> Result<usize> {
    let k = dt_ms / step_millis;
    let rounded = k.round();
    if !(rounded >= 1.0 && (k - rounded).abs() <= 1e-6) {
        return Err(Error::Domain(format!(
            "{dt_ms} ms is not a positive multiple of the {step_millis} ms baseline step"
        )));
    }
    Ok(rounded as usize)
}

/// Scores every test-side `(input, target)` pair at each displacement in
/// `displacements_ms`. Displacements that fall between frames of every test
/// segment have no pairs and are skipped.
pub fn evaluate<T: Float>(
    predictor: Predictor<'_, T>,
    corpus: &VideoCorpus,
    segments: &[ActionSegment],
    split: &SplitSpec,
    displacements_ms: &[f64],
    settings: &EvalSettings,
    method: &str,
) -> Result<MetricReport> {
    settings.validate()?;
    if !segments.iter().any(|s| split.side_of(&s.actor_id) == Some(SplitSide::Test)) {
        return Err(Error::Evaluation("the test side of the split has no segments".into()));
    }
    let mut builder = ReportBuilder::new();
    for &dt in displacements_ms {
        let sampler = match TupleSampler::new(corpus, segments, split, SplitSide::Test, DisplacementFilter::Exactly(dt)) {
            Ok(s) => s,
            Err(Error::Stream(_)) => continue,
            Err(e) => return Err(e),
        };
        for i in 0..sampler.len() {
            let tuple = sampler.tuple(i);
            let predicted = predictor.predict(&tuple.input_frame, dt)?;
            match score(&tuple.target_frame, &predicted, settings) {
                Ok(mse) => builder.record(tuple.source, dt, mse),
                Err(Error::EmptyMask) => builder.exclude(tuple.source, dt),
                Err(e) => return Err(e),
            }
        }
    }
    if builder.is_empty() {
        return Err(Error::Evaluation("no test pairs at the requested displacements".into()));
    }
    Ok(builder.build(method, *settings))
}
