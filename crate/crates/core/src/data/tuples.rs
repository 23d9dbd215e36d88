use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{frame_time, ActionLabel, ActionSegment, SplitSide, SplitSpec};
use crate::error::{Error, Result};
use crate::frame::{Frame, TemporalDisplacement};

/// Decoded frames of one recording, indexed from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub video_id: String,
    pub actor_id: String,
    pub action: ActionLabel,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

/// In-memory frames for a set of videos sharing one resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoCorpus {
    videos: BTreeMap<String, Video>,
}

impl VideoCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, video: Video) -> Result<()> {
        let resolution = video.frames.first().map(Frame::resolution);
        if video.frames.iter().any(|f| Some(f.resolution()) != resolution) {
            return Err(Error::Ingestion(format!("video {} mixes frame resolutions", video.video_id)));
        }
        if let (Some(existing), Some(new)) = (self.resolution(), resolution) {
            if existing != new {
                return Err(Error::Ingestion(format!(
                    "video {} is {}x{} but the corpus is {}x{}",
                    video.video_id, new.1, new.0, existing.1, existing.0
                )));
            }
        }
        if self.videos.contains_key(&video.video_id) {
            return Err(Error::Ingestion(format!("duplicate video id {}", video.video_id)));
        }
        self.videos.insert(video.video_id.clone(), video);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Option<&Video> {
        self.videos.get(video_id)
    }

    pub fn videos(&self) -> impl Iterator<Item = &Video> {
        self.videos.values()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn actor_ids(&self) -> BTreeSet<String> {
        self.videos.values().map(|v| v.actor_id.clone()).collect()
    }

    /// `(height, width)` of the frames, if any video has frames.
    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.videos.values().flat_map(|v| v.frames.first()).map(Frame::resolution).next()
    }
}

/// Provenance of a tuple: enough to recompute its displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceId {
    pub video_id: String,
    pub actor_id: String,
    pub action: ActionLabel,
    pub input_index: usize,
    pub target_index: usize,
    pub fps: f64,
}

impl core::fmt::Display for SourceId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}/{}/{}#{}->{}", self.action, self.actor_id, self.video_id, self.input_index, self.target_index)
    }
}

/// Training triple: input frame at relative time 0, displacement, and the
/// frame observed that long afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTuple {
    pub input_frame: Frame,
    pub dt: TemporalDisplacement,
    pub target_frame: Frame,
    pub source: SourceId,
}

/// Which displacements a sampler may emit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisplacementFilter {
    /// Every whole number of frame intervals up to this many milliseconds.
    UpTo(f64),
    /// Only this displacement (e.g. one frame interval for the baseline).
    Exactly(f64),
}

impl DisplacementFilter {
    const SLACK_MS: f64 = 1e-9;

    fn admits(self, dt: f64) -> bool {
        match self {
            DisplacementFilter::UpTo(max) => dt <= max + Self::SLACK_MS,
            DisplacementFilter::Exactly(want) => (dt - want).abs() <= Self::SLACK_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pair {
    segment: usize,
    input: usize,
    delta: usize,
}

/// Uniform sampler over every admissible `(input, target)` frame pair of the
/// segments on one side of a split. Both frames of a pair always come from
/// the same segment.
#[derive(Debug, Clone)]
pub struct TupleSampler<'c> {
    corpus: &'c VideoCorpus,
    segments: Vec<ActionSegment>,
    pairs: Vec<Pair>,
}

impl<'c> TupleSampler<'c> {
    pub fn new(
        corpus: &'c VideoCorpus,
        segments: &[ActionSegment],
        split: &SplitSpec,
        side: SplitSide,
        filter: DisplacementFilter,
    ) -> Result<Self> {
        let chosen: Vec<ActionSegment> = segments
            .iter()
            .filter(|s| split.side_of(&s.actor_id) == Some(side))
            .cloned()
            .collect();
        if chosen.is_empty() {
            return Err(Error::Stream(format!("no segments for the {side:?} side of the split")));
        }
        let mut pairs = Vec::new();
        for (index, segment) in chosen.iter().enumerate() {
            segment.validate()?;
            let video = corpus
                .get(&segment.video_id)
                .ok_or_else(|| Error::Stream(format!("segment refers to unknown video {}", segment.video_id)))?;
            if segment.end_frame >= video.frames.len() {
                return Err(Error::Stream(format!(
                    "segment {}..={} exceeds the {} frames of {}",
                    segment.start_frame,
                    segment.end_frame,
                    video.frames.len(),
                    segment.video_id
                )));
            }
            if let DisplacementFilter::UpTo(max) = filter {
                if max + DisplacementFilter::SLACK_MS < segment.frame_interval_ms() {
                    return Err(Error::Stream(format!(
                        "maximum displacement {max} ms is shorter than one frame interval of {}",
                        segment.video_id
                    )));
                }
            }
            for delta in 1..segment.frame_count() {
                if !filter.admits(frame_time(delta as u64, segment.fps)?) {
                    continue;
                }
                for input in segment.start_frame..=segment.end_frame - delta {
                    pairs.push(Pair { segment: index, input, delta });
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Stream("no admissible (input, target) pairs".into()));
        }
        Ok(Self { corpus, segments: chosen, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn corpus(&self) -> &'c VideoCorpus {
        self.corpus
    }

    pub fn segments(&self) -> &[ActionSegment] {
        &self.segments
    }

    /// `(video_id, input_index, target_index)` of every admissible pair.
    pub fn pair_indices(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.pairs
            .iter()
            .map(|p| (self.segments[p.segment].video_id.as_str(), p.input, p.input + p.delta))
    }

    pub fn tuple(&self, index: usize) -> SampleTuple {
        let pair = self.pairs[index];
        let segment = &self.segments[pair.segment];
        let video = self.corpus.get(&segment.video_id).expect("checked at construction");
        let dt = frame_time(pair.delta as u64, segment.fps).expect("checked at construction");
        SampleTuple {
            input_frame: video.frames[pair.input].clone(),
            dt: TemporalDisplacement::from_millis(dt).expect("delta is at least one frame"),
            target_frame: video.frames[pair.input + pair.delta].clone(),
            source: SourceId {
                video_id: segment.video_id.clone(),
                actor_id: segment.actor_id.clone(),
                action: segment.action,
                input_index: pair.input,
                target_index: pair.input + pair.delta,
                fps: segment.fps,
            },
        }
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> SampleTuple {
        self.tuple(rng.gen_range(0..self.pairs.len()))
    }

    pub fn draw_batch(&self, size: usize, rng: &mut dyn RngCore) -> Vec<SampleTuple> {
        (0..size).map(|_| self.draw(rng)).collect()
    }

    /// Endless stream of uniformly drawn tuples.
    pub fn stream<'s, R: RngCore>(&'s self, mut rng: R) -> impl Iterator<Item = SampleTuple> + 's
    where
        R: 's,
    {
        core::iter::repeat_with(move || self.draw(&mut rng))
    }
}
