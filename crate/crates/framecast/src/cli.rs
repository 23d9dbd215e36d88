//! `framecast` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use framecast_core::data::synthetic::SyntheticCorpusSpec;
use framecast_core::data::{make_split, preprocess_frame, ActionLabel, SplitSpec, RAW_HEIGHT, RAW_WIDTH};
use framecast_core::baseline::rollout;
use framecast_core::{Frame, TemporalDisplacement};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::{Preset, RunConfig};
use crate::corpus::{self, prepare_output_dir, read_frame, write_frame};
use crate::error::{Error, IoContext, Result};
use crate::evaluate::{evaluate_checkpoint, write_reports};
use crate::manifest::RunManifest;
use crate::trainer::{self, TrainPlan};

/// Exit status when an evaluation finished but skipped edgeless samples.
pub const EXIT_EXCLUSIONS: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "framecast", version, about = "Time-conditioned frame prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for initialization, batch order, dropout and splits.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// No progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus.
    Synth {
        /// Corpus spec (TOML); the 64x64 moving square when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Corpus directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Crop extracted raw frames into a corpus using a sequence listing.
    Ingest {
        /// Directory holding one folder of frame images per video.
        #[arg(long)]
        frames: PathBuf,
        /// Lines such as `person01_boxing_d1 frames 1-95, 96-185`.
        #[arg(long)]
        sequences: PathBuf,
        /// Framerate of every video [default: 25].
        #[arg(long)]
        fps: Option<f64>,
        /// Corpus directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a time-conditioned network, or a baseline with `--baseline`.
    Train(TrainArgs),
    /// Predict one frame per `--dt` with a time-conditioned checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grayscale PNG at the model resolution, or a raw 160x120 frame.
        #[arg(long)]
        input: PathBuf,
        /// Displacement in milliseconds; repeatable.
        #[arg(long = "dt")]
        dt: Vec<f64>,
        /// Directory for `pred_dt<ms>ms.png` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Feed a baseline checkpoint its own predictions `--steps` times.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Number of predictions, each one step further ahead.
        #[arg(long)]
        steps: usize,
        /// Directory for `rollout_k<k>.png` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-MSE reports for a time-conditioned and/or a baseline checkpoint.
    Evaluate {
        /// Time-conditioned checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Baseline checkpoint, scored by rollout.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Displacements to score; repeatable. Defaults to `[eval]`.
        #[arg(long = "dt")]
        dt: Vec<f64>,
        /// Score only segments of this action.
        #[arg(long)]
        action: Option<ActionLabel>,
        /// Directory for records, reports and `table.md`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for the checkpoint, log and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Train only on segments of this action.
    #[arg(long)]
    pub action: Option<ActionLabel>,
    /// Time-unaware network trained on one fixed displacement.
    #[arg(long)]
    pub baseline: bool,
    /// full, half_resolution, reduced_64 or miniature.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Steps between checkpoints; 0 saves only at the end.
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Share of actors on the training side.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// End the run after this step, keeping a resumable checkpoint.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.apply_seed(seed);
    }
    Ok(config)
}

fn say(global: &GlobalArgs, message: impl AsRef<str>) {
    if !global.quiet {
        eprintln!("{}", message.as_ref());
    }
}

/// Runs one parsed command; the returned code is the process exit status.
pub fn run(cli: Cli) -> Result<u8> {
    let global = &cli.global;
    match cli.command {
        Command::Synth { spec, out } => synth(global, spec.as_deref(), &out),
        Command::Ingest { frames, sequences, fps, out } => ingest(global, &frames, &sequences, fps, &out),
        Command::Train(args) => train(global, &args),
        Command::Predict { checkpoint, input, dt, out } => predict(global, &checkpoint, &input, &dt, &out),
        Command::Rollout { checkpoint, input, steps, out } => rollout_cmd(global, &checkpoint, &input, steps, &out),
        Command::Evaluate { checkpoint, baseline, data, dt, action, out } => {
            evaluate_cmd(global, checkpoint.as_deref(), baseline.as_deref(), &data, &dt, action, &out)
        }
    }
}

fn synth(global: &GlobalArgs, spec_path: Option<&Path>, out: &Path) -> Result<u8> {
    let mut spec = match spec_path {
        Some(path) => {
            let text = fs::read_to_string(path).at(path)?;
            toml::from_str::<SyntheticCorpusSpec>(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticCorpusSpec::moving_square_64(),
    };
    if let Some(seed) = global.seed {
        spec.seed = seed;
    }
    // render before touching the output so a bad spec leaves nothing behind
    let generated = spec.generate().map_err(|e| Error::Usage(e.to_string()))?;
    prepare_output_dir(out, global.force)?;
    let mut manifest = RunManifest::new("synth", &spec, Some(spec.seed)).output("corpus", out);
    if let Some(p) = spec_path {
        manifest = manifest.input("spec", p);
    }
    manifest.write(out)?;
    corpus::write_corpus(out, &generated.corpus, &generated.segments)?;
    let path = out.join("spec.toml");
    fs::write(&path, toml::to_string(&spec).expect("spec serializes")).at(&path)?;
    let path = out.join("scenes.json");
    let scenes = serde_json::to_string_pretty(&generated.scenes).expect("scenes serialize");
    fs::write(&path, scenes + "\n").at(&path)?;
    say(global, format!("wrote {} videos to {}", generated.corpus.len(), out.display()));
    Ok(0)
}

fn ingest(global: &GlobalArgs, frames: &Path, sequences: &Path, fps: Option<f64>, out: &Path) -> Result<u8> {
    if let Some(f) = fps {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Usage(format!("--fps must be positive, got {f}")));
        }
    }
    let text = fs::read_to_string(sequences).at(sequences)?;
    let entries = corpus::parse_sequences(&text, sequences)?;
    let (videos, segments) = corpus::ingest(frames, &entries, fps)?;
    prepare_output_dir(out, global.force)?;
    RunManifest::new("ingest", serde_json::json!({ "fps": fps }), None)
        .input("frames", frames)
        .input("sequences", sequences)
        .output("corpus", out)
        .write(out)?;
    corpus::write_corpus(out, &videos, &segments)?;
    say(global, format!("ingested {} videos, {} segments", videos.len(), segments.len()));
    Ok(0)
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    config: &'a RunConfig,
    model: &'a framecast_core::ModelConfig,
    split: &'a SplitSpec,
    action: Option<ActionLabel>,
    baseline_step_millis: Option<f64>,
    resume: bool,
    stop_after: Option<u64>,
}

fn train(global: &GlobalArgs, args: &TrainArgs) -> Result<u8> {
    let mut config = load_config(global)?;
    if let Some(p) = args.preset {
        config.model.preset = Some(p);
        config.model.config = None;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.max_steps {
        config.train.max_steps = v;
    }
    if let Some(v) = args.learning_rate {
        config.train.learning_rate = v;
    }
    if let Some(v) = args.checkpoint_interval {
        config.train.checkpoint_interval = v;
    }
    if let Some(v) = args.train_fraction {
        config.split.train_fraction = v;
    }
    config.validate()?;

    let (videos, segments) = corpus::read_corpus(&args.data)?;
    let selected = trainer::select_segments(&segments, args.action);
    let mut model = config.model.resolve()?;
    let baseline_step_millis = if args.baseline {
        model = model.without_time_branch();
        let step = match config.baseline.step_millis {
            Some(s) => s,
            None => selected
                .first()
                .map(|s| s.frame_interval_ms())
                .ok_or_else(|| Error::Usage("no segments to train on".into()))?,
        };
        Some(step)
    } else {
        None
    };
    let actors = selected.iter().map(|s| s.actor_id.clone()).collect();
    let split = make_split(&actors, config.split.train_fraction, config.split_seed())?;
    let plan = TrainPlan { model, train: config.train.clone(), split, action: args.action, baseline_step_millis };

    if args.resume {
        fs::create_dir_all(&args.out).at(&args.out)?;
    } else {
        prepare_output_dir(&args.out, global.force)?;
    }
    let resolved = ResolvedTrain {
        config: &config,
        model: &plan.model,
        split: &plan.split,
        action: plan.action,
        baseline_step_millis,
        resume: args.resume,
        stop_after: args.stop_after,
    };
    RunManifest::new("train", &resolved, Some(plan.train.seed))
        .input("corpus", &args.data)
        .output("run", &args.out)
        .write(&args.out)?;

    let total = plan.train.max_steps;
    let report_every = (total / 20).max(1);
    let outcome = trainer::train(
        &videos,
        &segments,
        &plan,
        &args.out,
        args.resume,
        |s| args.stop_after.is_some_and(|n| s.step() >= n),
        |s| {
            if s.step() % report_every == 0 {
                say(global, format!("step {}/{total} loss {:.6}", s.step(), s.loss().average));
            }
        },
    )?;
    say(
        global,
        format!("{} at step {}: {}", if outcome.stopped { "stopped" } else { "finished" }, outcome.state.step(), outcome.checkpoint.display()),
    );
    Ok(0)
}

/// Loads an input image at the model's resolution, cropping raw recordings.
fn load_input(path: &Path, resolution: (usize, usize)) -> Result<Frame> {
    let frame = read_frame(path)?;
    if frame.resolution() == resolution {
        return Ok(frame);
    }
    if frame.resolution() == (RAW_HEIGHT, RAW_WIDTH) {
        let cropped = preprocess_frame(&frame)?;
        if cropped.resolution() == resolution {
            return Ok(cropped);
        }
    }
    Err(Error::format(
        path,
        format!("image is {}x{}, the model takes {}x{}", frame.width(), frame.height(), resolution.1, resolution.0),
    ))
}

/// `pred_dt40ms.png`, `pred_dt62.5ms.png`.
pub fn prediction_file_name(dt_ms: f64) -> String {
    format!("pred_dt{dt_ms}ms.png")
}

pub fn rollout_file_name(step: usize) -> String {
    format!("rollout_k{step:03}.png")
}

fn predict(global: &GlobalArgs, checkpoint: &Path, input: &Path, dts: &[f64], out: &Path) -> Result<u8> {
    if dts.is_empty() {
        return Err(Error::Usage("give at least one --dt".into()));
    }
    let displacements = dts
        .iter()
        .map(|&d| TemporalDisplacement::from_millis(d).map_err(|e| Error::Usage(format!("--dt {d}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.require(ModelKind::TimeConditioned)?;
    let network = ckpt.network();
    let frame = load_input(input, network.config().input_resolution)?;
    prepare_output_dir(out, global.force)?;
    RunManifest::new("predict", serde_json::json!({ "dt_ms": dts }), None)
        .input("checkpoint", checkpoint)
        .input("image", input)
        .output("predictions", out)
        .write(out)?;
    for (dt, ms) in displacements.into_iter().zip(dts) {
        write_frame(&out.join(prediction_file_name(*ms)), &network.predict(&frame, dt)?)?;
    }
    say(global, format!("wrote {} predictions to {}", dts.len(), out.display()));
    Ok(0)
}

fn rollout_cmd(global: &GlobalArgs, checkpoint: &Path, input: &Path, steps: usize, out: &Path) -> Result<u8> {
    if steps == 0 {
        return Err(Error::Usage("--steps must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.require(ModelKind::Baseline)?;
    let network = ckpt.network();
    let frame = load_input(input, network.config().input_resolution)?;
    prepare_output_dir(out, global.force)?;
    RunManifest::new("rollout", serde_json::json!({ "steps": steps, "step_millis": ckpt.baseline_step_millis }), None)
        .input("checkpoint", checkpoint)
        .input("image", input)
        .output("frames", out)
        .write(out)?;
    for (i, f) in rollout(network, &frame, steps)?.iter().enumerate() {
        write_frame(&out.join(rollout_file_name(i + 1)), f)?;
    }
    say(global, format!("wrote {steps} rollout frames to {}", out.display()));
    Ok(0)
}

/// The split stored in a checkpoint, if it was trained here.
fn stored_split(ckpt: &Checkpoint) -> Option<&SplitSpec> {
    ckpt.training().map(|(_, meta)| &meta.split)
}

#[derive(Serialize)]
struct ResolvedEval<'a> {
    config: &'a RunConfig,
    split: &'a SplitSpec,
    displacements_ms: &'a [f64],
    action: Option<ActionLabel>,
}

fn evaluate_cmd(
    global: &GlobalArgs,
    checkpoint: Option<&Path>,
    baseline: Option<&Path>,
    data: &Path,
    dt: &[f64],
    action: Option<ActionLabel>,
    out: &Path,
) -> Result<u8> {
    let config = load_config(global)?;
    config.validate()?;
    let ours = checkpoint.map(Checkpoint::load).transpose()?;
    let base = baseline.map(Checkpoint::load).transpose()?;
    if ours.is_none() && base.is_none() {
        return Err(Error::Usage("give --checkpoint, --baseline or both".into()));
    }
    if let Some(c) = &ours {
        c.require(ModelKind::TimeConditioned)?;
    }
    if let Some(c) = &base {
        c.require(ModelKind::Baseline)?;
    }
    let displacements: Vec<f64> = if dt.is_empty() { config.eval.displacements_ms.clone() } else { dt.to_vec() };
    if displacements.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Usage("displacements must be positive".into()));
    }
    let action = action.or_else(|| {
        [&ours, &base].into_iter().flatten().find_map(|c| c.training().and_then(|(_, m)| m.action))
    });

    let (videos, segments) = corpus::read_corpus(data)?;
    let splits: Vec<&SplitSpec> = [&ours, &base].into_iter().flatten().filter_map(stored_split).collect();
    if splits.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Usage("the two checkpoints were trained on different splits".into()));
    }
    let split = match splits.first() {
        Some(s) => (*s).clone(),
        None => {
            let actors = trainer::select_segments(&segments, action).iter().map(|s| s.actor_id.clone()).collect();
            make_split(&actors, config.split.train_fraction, config.split_seed())?
        }
    };

    prepare_output_dir(out, global.force)?;
    let resolved = ResolvedEval { config: &config, split: &split, displacements_ms: &displacements, action };
    let mut manifest = RunManifest::new("evaluate", &resolved, config.seed).input("corpus", data).output("reports", out);
    if let Some(p) = checkpoint {
        manifest = manifest.input("checkpoint", p);
    }
    if let Some(p) = baseline {
        manifest = manifest.input("baseline", p);
    }
    manifest.write(out)?;

    let settings = config.eval.settings();
    let mut reports = Vec::new();
    for ckpt in [&base, &ours].into_iter().flatten() {
        reports.push(evaluate_checkpoint(ckpt, &videos, &segments, &split, action, &displacements, &settings)?);
    }
    let refs: Vec<_> = reports.iter().collect();
    write_reports(out, &refs)?;
    let table = crate::evaluate::render_table(&refs, framecast_core::evaluation::SCALE_255_SQUARED);
    if !global.quiet {
        print!("{table}");
    }
    let excluded: usize = reports.iter().map(|r| r.excluded.len()).sum();
    if excluded > 0 {
        say(global, format!("{excluded} samples had no groundtruth edges and were excluded"));
        return Ok(EXIT_EXCLUSIONS);
    }
    Ok(0)
}
