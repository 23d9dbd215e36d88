use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::mask::EvalSettings;
use crate::data::{ActionLabel, SourceId};

/// Multiplier taking an MSE on `[0, 1]` intensities to the `[0, 255]` scale.
pub const SCALE_255_SQUARED: f64 = 255.0 * 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub source: SourceId,
    pub dt_ms: f64,
    pub mse: f64,
}

/// A sample whose groundtruth had no edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSample {
    pub source: SourceId,
    pub dt_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub count: usize,
    pub mean: f64,
}

impl GroupMean {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (count, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        (count > 0).then(|| GroupMean { count, mean: sum / count as f64 })
    }
}

/// Arithmetic mean of per-action means, the "Average" column of the table.
pub fn average_of_action_means(means: &[f64]) -> Option<f64> {
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// Per-sample scores with per-action, per-displacement and overall means.
/// Every aggregate is recomputable from `records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub settings: EvalSettings,
    pub records: Vec<SampleRecord>,
    pub excluded: Vec<ExcludedSample>,
    /// In [`ActionLabel::ALL`] order, only actions with records.
    pub per_action: Vec<(ActionLabel, GroupMean)>,
    /// Ascending displacement.
    pub per_displacement: Vec<(f64, GroupMean)>,
    pub grand_mean: Option<f64>,
    pub action_average: Option<f64>,
}

impl MetricReport {
    pub fn sample_count(&self) -> usize {
        self.records.len()
    }

    pub fn action_mean(&self, action: ActionLabel) -> Option<f64> {
        self.per_action.iter().find(|(a, _)| *a == action).map(|(_, g)| g.mean)
    }

    pub fn displacement_mean(&self, dt_ms: f64) -> Option<f64> {
        self.per_displacement.iter().find(|(d, _)| *d == dt_ms).map(|(_, g)| g.mean)
    }
}

fn record_order(a: &SampleRecord, b: &SampleRecord) -> Ordering {
    source_order(&a.source, a.dt_ms, &b.source, b.dt_ms).then(a.mse.total_cmp(&b.mse))
}

fn source_order(a: &SourceId, adt: f64, b: &SourceId, bdt: f64) -> Ordering {
    (&a.video_id, a.input_index, a.target_index)
        .cmp(&(&b.video_id, b.input_index, b.target_index))
        .then(adt.total_cmp(&bdt))
        .then(a.actor_id.cmp(&b.actor_id))
        .then(a.action.cmp(&b.action))
        .then(a.fps.total_cmp(&b.fps))
}

/// Accumulates scores in any order; merging partial builders gives the same
/// report as collecting everything in one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportBuilder {
    records: Vec<SampleRecord>,
    excluded: Vec<ExcludedSample>,
}

impl ReportBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, source: SourceId, dt_ms: f64, mse: f64) {
        self.records.push(SampleRecord { source, dt_ms, mse });
    }

    pub fn exclude(&mut self, source: SourceId, dt_ms: f64) {
        self.excluded.push(ExcludedSample { source, dt_ms });
    }

    pub fn merge(mut self, other: ReportBuilder) -> Self {
        self.records.extend(other.records);
        self.excluded.extend(other.excluded);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty() && self.excluded.is_empty()
    }

    pub fn build(mut self, method: &str, settings: EvalSettings) -> MetricReport {
        // canonical order first so sums never depend on arrival order
        self.records.sort_by(record_order);
        self.excluded.sort_by(|a, b| source_order(&a.source, a.dt_ms, &b.source, b.dt_ms));

        let per_action: Vec<(ActionLabel, GroupMean)> = ActionLabel::ALL
            .iter()
            .filter_map(|&action| {
                GroupMean::of(self.records.iter().filter(|r| r.source.action == action).map(|r| r.mse)).map(|g| (action, g))
            })
            .collect();
        let mut by_dt: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            // positive finite floats order like their bit patterns
            by_dt.entry(r.dt_ms.to_bits()).or_default().push(r.mse);
        }
        let per_displacement = by_dt
            .into_iter()
            .map(|(bits, v)| (f64::from_bits(bits), GroupMean::of(v.into_iter()).expect("nonempty group")))
            .collect();
        let grand_mean = GroupMean::of(self.records.iter().map(|r| r.mse)).map(|g| g.mean);
        let action_means: Vec<f64> = per_action.iter().map(|(_, g)| g.mean).collect();
        MetricReport {
            method: method.into(),
            settings,
            records: self.records,
            excluded: self.excluded,
            per_action,
            per_displacement,
            grand_mean,
            action_average: average_of_action_means(&action_means),
        }
    }
}
