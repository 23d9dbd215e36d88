//! Dataset protocol: preprocessing, frame timing, actor-disjoint splits and
//! `(input, dt, target)` tuple sampling, plus a synthetic scene renderer.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub mod synthetic;
mod tuples;

pub use tuples::{DisplacementFilter, SampleTuple, SourceId, TupleSampler, Video, VideoCorpus};

/// Raw frame geometry of the source recordings.
pub const RAW_WIDTH: usize = 160;
pub const RAW_HEIGHT: usize = 120;
/// Side of the square frames the model consumes.
pub const CROPPED_SIDE: usize = 120;
/// Framerate assumed when a recording does not state one.
pub const DEFAULT_FPS: f64 = 25.0;

/// Central 120-px horizontal crop of a 160x120 frame.
///
/// Anything other than a 160-wide, 120-high frame is rejected, including
/// frames that are already 120x120.
pub fn preprocess_frame(raw: &Frame) -> Result<Frame> {
    if raw.resolution() != (RAW_HEIGHT, RAW_WIDTH) {
        return Err(Error::Ingestion(format!(
            "expected a {RAW_WIDTH}x{RAW_HEIGHT} raw frame, got {}x{}",
            raw.width(),
            raw.height()
        )));
    }
    let offset = (RAW_WIDTH - CROPPED_SIDE) / 2;
    Frame::from_fn(CROPPED_SIDE, CROPPED_SIDE, |row, col| raw.get(row, col + offset))
}

/// Timestamp of frame `frame_index` in milliseconds.
pub fn frame_time(frame_index: u64, fps: f64) -> Result<f64> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Domain(format!("framerate must be positive, got {fps}")));
    }
    Ok(frame_index as f64 * 1000.0 / fps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionLabel {
    Walking,
    Jogging,
    Running,
    #[serde(rename = "handclapping")]
    HandClapping,
    #[serde(rename = "handwaving")]
    HandWaving,
    Boxing,
}

impl ActionLabel {
    /// Report column order.
    pub const ALL: [ActionLabel; 6] = [
        ActionLabel::Jogging,
        ActionLabel::Running,
        ActionLabel::Walking,
        ActionLabel::HandClapping,
        ActionLabel::HandWaving,
        ActionLabel::Boxing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::Walking => "walking",
            ActionLabel::Jogging => "jogging",
            ActionLabel::Running => "running",
            ActionLabel::HandClapping => "handclapping",
            ActionLabel::HandWaving => "handwaving",
            ActionLabel::Boxing => "boxing",
        }
    }

    /// Short column heading used in report tables.
    pub fn heading(self) -> &'static str {
        match self {
            ActionLabel::Walking => "Walking",
            ActionLabel::Jogging => "Jogging",
            ActionLabel::Running => "Running",
            ActionLabel::HandClapping => "Clapping",
            ActionLabel::HandWaving => "Waving",
            ActionLabel::Boxing => "Boxing",
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_lowercase();
        match normalized.as_str() {
            "walking" => Ok(ActionLabel::Walking),
            "jogging" => Ok(ActionLabel::Jogging),
            "running" => Ok(ActionLabel::Running),
            "handclapping" | "clapping" => Ok(ActionLabel::HandClapping),
            "handwaving" | "waving" => Ok(ActionLabel::HandWaving),
            "boxing" => Ok(ActionLabel::Boxing),
            _ => Err(Error::Ingestion(format!("unknown action label {s:?}"))),
        }
    }
}

/// A span of frames `start_frame..=end_frame` of one video showing one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub video_id: String,
    pub actor_id: String,
    pub action: ActionLabel,
    pub start_frame: usize,
    pub end_frame: usize,
    pub fps: f64,
}

impl ActionSegment {
    pub fn validate(&self) -> Result<()> {
        if self.start_frame >= self.end_frame {
            return Err(Error::Ingestion(format!(
                "segment of {} must start before it ends ({}..={})",
                self.video_id, self.start_frame, self.end_frame
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Ingestion(format!("segment of {} has framerate {}", self.video_id, self.fps)));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

/// Partition of performers into disjoint train and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_actor_ids: BTreeSet<String>,
    pub test_actor_ids: BTreeSet<String>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn side_of(&self, actor_id: &str) -> Option<SplitSide> {
        if self.train_actor_ids.contains(actor_id) {
            Some(SplitSide::Train)
        } else if self.test_actor_ids.contains(actor_id) {
            Some(SplitSide::Test)
        } else {
            None
        }
    }

    pub fn actors(&self, side: SplitSide) -> &BTreeSet<String> {
        match side {
            SplitSide::Train => &self.train_actor_ids,
            SplitSide::Test => &self.test_actor_ids,
        }
    }
}

/// Seeded random split by actor. The train side receives
/// `round(train_fraction * n)` actors, kept within `1..n` so neither side is empty.
pub fn make_split(actor_ids: &BTreeSet<String>, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    let n = actor_ids.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 actors to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let train_count = (num_traits::Float::round(train_fraction * n as f64) as usize).clamp(1, n - 1);
    let mut shuffled: Vec<&String> = actor_ids.iter().collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = shuffled.split_at(train_count);
    Ok(SplitSpec {
        train_actor_ids: train.iter().map(|s| (*s).clone()).collect(),
        test_actor_ids: test.iter().map(|s| (*s).clone()).collect(),
        train_fraction,
        seed,
    })
}
