//! Run configuration files.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! preset = "reduced_64"      # or a full `[model.config]` table
//!
//! [train]
//! batch_size = 16
//! learning_rate = 1e-4
//!
//! [split]
//! train_fraction = 0.8
//!
//! [eval]
//! displacements_ms = [40, 80, 120, 160, 200]
//!
//! [baseline]
//! step_millis = 40
//! ```
//!
//! Values resolve as built-in defaults, then the file, then command-line
//! flags.

use std::fs;
use std::path::Path;

use framecast_core::evaluation::EvalSettings;
use framecast_core::training::TrainConfig;
use framecast_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 120x120 input with the full layer widths.
    #[default]
    Full,
    HalfResolution,
    #[serde(rename = "reduced_64")]
    Reduced64,
    Miniature,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::HalfResolution => ModelConfig::half_resolution(),
            Preset::Reduced64 => ModelConfig::reduced_64(),
            Preset::Miniature => ModelConfig::miniature(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Preset::Full),
            "half_resolution" => Ok(Preset::HalfResolution),
            "reduced_64" => Ok(Preset::Reduced64),
            "miniature" => Ok(Preset::Miniature),
            _ => Err(format!("unknown preset {s:?} (full, half_resolution, reduced_64, miniature)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Option<Preset>,
    /// Explicit geometry; excludes `preset`.
    pub config: Option<ModelConfig>,
}

impl ModelSection {
    /// Geometry of the time-conditioned model.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let config = match (&self.config, self.preset) {
            (Some(_), Some(_)) => return Err(Error::Usage("[model] takes either `preset` or `config`, not both".into())),
            (Some(c), None) => c.clone(),
            (None, p) => p.unwrap_or_default().config(),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
    /// Falls back to the run seed.
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub dilation: usize,
    pub displacements_ms: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let s = EvalSettings::default();
        Self {
            canny_sigma: s.canny_sigma,
            canny_low: s.canny_low,
            canny_high: s.canny_high,
            dilation: s.dilation,
            displacements_ms: vec![40.0, 80.0, 120.0, 160.0, 200.0],
        }
    }
}

impl EvalSection {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            canny_sigma: self.canny_sigma,
            canny_low: self.canny_low,
            canny_high: self.canny_high,
            dilation: self.dilation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// One frame interval of the training corpus when absent.
    pub step_millis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives initialization, batch order, dropout and the split unless a
    /// section says otherwise.
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub baseline: BaselineSection,
}

impl RunConfig {
    /// Parse errors come back as usage errors naming the line and field.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Usage(format!("{}: {e}", origin.display())))?;
        let table: toml::Table = toml::from_str(text).expect("parsed above");
        let pinned = table.get("train").and_then(|t| t.get("seed")).is_some();
        if let (Some(seed), false) = (config.seed, pinned) {
            config.train.seed = seed;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Sets the run seed, replacing the training seed. The split follows it
    /// unless `[split] seed` is pinned.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = seed;
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.or(self.seed).unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.resolve()?;
        self.train.validate()?;
        self.eval.settings().validate()?;
        if self.eval.displacements_ms.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Usage("[eval] displacements must be positive".into()));
        }
        if let Some(step) = self.baseline.step_millis {
            if !(step.is_finite() && step > 0.0) {
                return Err(Error::Usage(format!("[baseline] step_millis must be positive, got {step}")));
            }
        }
        Ok(())
    }
}
