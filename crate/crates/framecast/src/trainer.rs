//! Training runs on disk: checkpoint file, step log, resumption.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use framecast_core::data::{ActionLabel, ActionSegment, DisplacementFilter, SplitSide, SplitSpec, TupleSampler, VideoCorpus};
use framecast_core::training::{mean_intensity, TrainConfig, TrainState};
use framecast_core::{ModelConfig, Network};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.fcp";
pub const LOG_FILE: &str = "train_log.jsonl";

/// What to train. `model` already lacks the time branch for a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub action: Option<ActionLabel>,
    /// Set for a baseline: the one displacement it learns.
    pub baseline_step_millis: Option<f64>,
}

impl TrainPlan {
    pub fn meta(&self) -> TrainingMeta {
        TrainingMeta { train: self.train.clone(), split: self.split.clone(), action: self.action }
    }

    /// Pairs the plan trains on.
    pub fn filter(&self) -> DisplacementFilter {
        match self.baseline_step_millis {
            Some(step) => DisplacementFilter::Exactly(step),
            None => DisplacementFilter::UpTo(self.train.max_displacement_ms),
        }
    }

    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        if self.baseline_step_millis.is_some() == self.model.has_time_branch() {
            return Err(framecast_core::Error::ModelKind(
                "a baseline plan needs a model without a time branch, a timed plan one with it".into(),
            )
            .into());
        }
        Ok(())
    }
}

/// Segments of `action`, or all of them.
pub fn select_segments(segments: &[ActionSegment], action: Option<ActionLabel>) -> Vec<ActionSegment> {
    segments.iter().filter(|s| action.is_none_or(|a| s.action == a)).cloned().collect()
}

#[derive(Serialize)]
struct LogLine {
    step: u64,
    wall_time_s: f64,
    loss: f64,
    average_loss: f64,
    learning_rate: f64,
}

pub struct TrainOutcome {
    pub state: TrainState<f32>,
    pub checkpoint: PathBuf,
    /// True when `stop` ended the run before `max_steps`.
    pub stopped: bool,
}

/// Fresh state for `plan`: seeded initialization plus, if enabled, the
/// output prior from the training frames.
pub fn initial_state(plan: &TrainPlan, sampler: &TupleSampler<'_>) -> Result<TrainState<f32>> {
    let mut network = Network::<f32>::init(plan.model.clone(), plan.train.seed)?;
    if plan.train.output_prior {
        network.set_output_prior(mean_intensity(sampler).clamp(1e-3, 1.0 - 1e-3))?;
    }
    Ok(TrainState::new(network, plan.train.seed))
}

/// Everything but the step budget and checkpoint cadence must match to
/// continue a run.
fn check_resumable(saved: &Checkpoint, plan: &TrainPlan) -> Result<()> {
    let Some((state, meta)) = saved.training() else {
        return Err(Error::Usage("the checkpoint holds no optimizer state to resume from".into()));
    };
    let relax = |t: &TrainConfig| TrainConfig { max_steps: 0, checkpoint_interval: 0, ..t.clone() };
    let mismatch = if state.network().config() != &plan.model {
        Some("model configuration")
    } else if relax(&meta.train) != relax(&plan.train) {
        Some("training configuration")
    } else if meta.split != plan.split {
        Some("split")
    } else if meta.action != plan.action {
        Some("action filter")
    } else if saved.baseline_step_millis != plan.baseline_step_millis {
        Some("baseline step")
    } else {
        None
    };
    match mismatch {
        Some(what) => Err(Error::Usage(format!("cannot resume: the checkpoint's {what} differs from this run"))),
        None => Ok(()),
    }
}

/// Trains into `out_dir`, writing `checkpoint.fcp` every
/// `checkpoint_interval` steps and at the end, and one log line per step.
/// With `resume`, continues from an existing checkpoint in `out_dir`.
/// `stop` is polled after every step. On divergence the last good state is
/// saved before the error is returned.
pub fn train(
    corpus: &VideoCorpus,
    segments: &[ActionSegment],
    plan: &TrainPlan,
    out_dir: &Path,
    resume: bool,
    mut stop: impl FnMut(&TrainState<f32>) -> bool,
    mut progress: impl FnMut(&TrainState<f32>),
) -> Result<TrainOutcome> {
    plan.validate()?;
    let selected = select_segments(segments, plan.action);
    let sampler = TupleSampler::new(corpus, &selected, &plan.split, SplitSide::Train, plan.filter())?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);

    let mut state = if resume && checkpoint.exists() {
        let saved = Checkpoint::load(&checkpoint)?;
        check_resumable(&saved, plan)?;
        match saved.body {
            crate::checkpoint::Body::Training { state, .. } => state,
            crate::checkpoint::Body::Model(_) => unreachable!("checked above"),
        }
    } else {
        initial_state(plan, &sampler)?
    };
    let log_file = if resume {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .at(&log_path)?;
    let mut log = BufWriter::new(log_file);

    let save = |state: &TrainState<f32>| -> Result<()> {
        Checkpoint::from_training(state.clone(), plan.meta(), plan.baseline_step_millis).save(&checkpoint)
    };

    let started = Instant::now();
    let interval = plan.train.checkpoint_interval;
    let mut failure: Option<Error> = None;
    let outcome = state.run(&sampler, &plan.train, |s| {
        let loss = s.loss();
        let line = LogLine {
            step: s.step(),
            wall_time_s: started.elapsed().as_secs_f64(),
            loss: loss.last,
            average_loss: loss.average,
            learning_rate: plan.train.learning_rate,
        };
        let written = serde_json::to_writer(&mut log, &line)
            .map_err(std::io::Error::from)
            .and_then(|_| log.write_all(b"\n"))
            .at(&log_path)
            .and_then(|_| if interval > 0 && s.step() % interval == 0 { save(s) } else { Ok(()) });
        if let Err(e) = written {
            failure = Some(e);
            return ControlFlow::Break(());
        }
        progress(s);
        if stop(s) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    log.flush().at(&log_path)?;
    if let Some(e) = failure {
        return Err(e);
    }
    match outcome {
        Ok(stopped) => {
            save(&state)?;
            Ok(TrainOutcome { state, checkpoint, stopped: stopped.is_some() })
        }
        Err(e @ framecast_core::Error::Divergence { .. }) => {
            save(&state)?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Convenience for callers that keep no run directory: trains in memory
/// from a fresh state.
pub fn train_in_memory(corpus: &VideoCorpus, segments: &[ActionSegment], plan: &TrainPlan) -> Result<TrainState<f32>> {
    plan.validate()?;
    let selected = select_segments(segments, plan.action);
    let sampler = TupleSampler::new(corpus, &selected, &plan.split, SplitSide::Train, plan.filter())?;
    let mut state = initial_state(plan, &sampler)?;
    state.run(&sampler, &plan.train, |_| ControlFlow::<()>::Continue(()))?;
    Ok(state)
}

/// Lists the per-step log records of a run directory.
pub fn read_log(out_dir: &Path) -> Result<Vec<serde_json::Value>> {
    let path = out_dir.join(LOG_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(&path, format!("line {}: {e}", i + 1))))
        .collect()
}
