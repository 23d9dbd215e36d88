//! Checkpoint evaluation and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use framecast_core::data::{ActionLabel, ActionSegment, SplitSpec, VideoCorpus};
use framecast_core::evaluation::{evaluate, EvalSettings, MetricReport, Predictor, SCALE_255_SQUARED};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::error::{Error, IoContext, Result};
use crate::trainer::select_segments;

pub const METHOD_OURS: &str = "ours";
pub const METHOD_BASELINE: &str = "baseline";

/// Scores one checkpoint on the test side of `split`. Baselines reach each
/// displacement by rollout.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    corpus: &VideoCorpus,
    segments: &[ActionSegment],
    split: &SplitSpec,
    action: Option<ActionLabel>,
    displacements_ms: &[f64],
    settings: &EvalSettings,
) -> Result<MetricReport> {
    let network = checkpoint.network();
    let (predictor, method) = match checkpoint.kind() {
        ModelKind::TimeConditioned => (Predictor::Timed(network), METHOD_OURS),
        ModelKind::Baseline => {
            let step_millis = checkpoint
                .baseline_step_millis
                .ok_or_else(|| Error::Usage("baseline checkpoint does not record its step".into()))?;
            (Predictor::Rollout { network, step_millis }, METHOD_BASELINE)
        }
    };
    let selected = select_segments(segments, action);
    Ok(evaluate(predictor, corpus, &selected, split, displacements_ms, settings, method)?)
}

#[derive(Serialize)]
struct RecordsHeader<'a> {
    method: &'a str,
    settings: &'a EvalSettings,
    displacements_ms: Vec<f64>,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    #[serde(flatten)]
    source: &'a framecast_core::data::SourceId,
    dt_ms: f64,
    mse: Option<f64>,
    mse_255: Option<f64>,
    excluded: bool,
}

/// One JSON object per line: a settings header, then every scored and
/// excluded sample.
pub fn records_jsonl(report: &MetricReport) -> String {
    let header = RecordsHeader {
        method: &report.method,
        settings: &report.settings,
        displacements_ms: report.per_displacement.iter().map(|(d, _)| *d).collect(),
    };
    let mut out = serde_json::to_string(&header).expect("serializes") + "\n";
    for r in &report.records {
        let line = RecordLine {
            source: &r.source,
            dt_ms: r.dt_ms,
            mse: Some(r.mse),
            mse_255: Some(r.mse * SCALE_255_SQUARED),
            excluded: false,
        };
        out += &(serde_json::to_string(&line).expect("serializes") + "\n");
    }
    for e in &report.excluded {
        let line = RecordLine { source: &e.source, dt_ms: e.dt_ms, mse: None, mse_255: None, excluded: true };
        out += &(serde_json::to_string(&line).expect("serializes") + "\n");
    }
    out
}

/// Method rows against the six action columns and their average, with a
/// settings header. `scale` multiplies every value.
pub fn render_table(reports: &[&MetricReport], scale: f64) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let s = first.settings;
        let _ = writeln!(
            out,
            "# masked MSE x {scale}; canny sigma {} low {} high {}; dilation {}",
            s.canny_sigma, s.canny_low, s.canny_high, s.dilation
        );
    }
    let mut header = String::from("| Method |");
    let mut rule = String::from("|---|");
    for a in ActionLabel::ALL {
        header += &format!(" {} |", a.heading());
        rule += "---:|";
    }
    header += " Average |";
    rule += "---:|";
    let _ = writeln!(out, "{header}\n{rule}");
    for r in reports {
        let mut row = format!("| {} |", r.method);
        for a in ActionLabel::ALL {
            row += &match r.action_mean(a) {
                Some(v) => format!(" {:.2} |", v * scale),
                None => " n/a |".into(),
            };
        }
        row += &match r.action_average {
            Some(v) => format!(" {:.2} |", v * scale),
            None => " n/a |".into(),
        };
        let _ = writeln!(out, "{row}");
    }
    out
}

/// Writes `records_<method>.jsonl` and `report_<method>.json` per report,
/// plus `table.md` with both intensity scales.
pub fn write_reports(dir: &Path, reports: &[&MetricReport]) -> Result<()> {
    for r in reports {
        let path = dir.join(format!("records_{}.jsonl", r.method));
        fs::write(&path, records_jsonl(r)).at(&path)?;
        let path = dir.join(format!("report_{}.json", r.method));
        fs::write(&path, serde_json::to_string_pretty(r).expect("serializes") + "\n").at(&path)?;
    }
    let table = format!("{}\n{}", render_table(reports, SCALE_255_SQUARED), render_table(reports, 1.0));
    let path = dir.join("table.md");
    fs::write(&path, table).at(path)
}
