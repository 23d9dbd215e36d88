//! Analytic moving-shape scenes used as a desk-scale stand-in for real
//! action recordings.
//!
//! Pixel `(row, col)` covers the unit square `[col, col + 1) x [row, row + 1)`
//! and its intensity is `background + (foreground - background) * coverage`,
//! where coverage is the exact area of the shape inside that square.

use alloc::format;
use alloc::vec::Vec;

// inherent float methods shadow these whenever std is linked in
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{frame_time, ActionLabel, ActionSegment, Video, VideoCorpus};
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Bars are this many times taller than wide.
pub const BAR_ASPECT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// Axis-aligned square with side `size`.
    Square,
    /// Disk with diameter `size`.
    Disk,
    /// Axis-aligned rectangle `size` wide and `BAR_ASPECT * size` tall.
    Bar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Motion {
    /// Constant velocity in px/ms, `(vx, vy)`.
    Linear { velocity: (f64, f64) },
    /// `center(t) = start + amplitude * sin(2 pi t / period_ms)`.
    Oscillating { amplitude: (f64, f64), period_ms: f64 },
}

/// One synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub shape: ShapeKind,
    pub size: f64,
    /// Shape center `(x, y)` in pixels at `t = 0`.
    pub start: (f64, f64),
    pub motion: Motion,
    pub foreground: f32,
    pub background: f32,
    pub fps: f64,
    pub duration_ms: f64,
    /// `(height, width)`.
    pub resolution: (usize, usize),
}

impl SyntheticSceneSpec {
    fn half_extent(&self) -> (f64, f64) {
        match self.shape {
            ShapeKind::Square | ShapeKind::Disk => (self.size / 2.0, self.size / 2.0),
            ShapeKind::Bar => (self.size / 2.0, BAR_ASPECT * self.size / 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        let (h, w) = self.resolution;
        if h == 0 || w == 0 {
            return bad("scene resolution must be positive".into());
        }
        if !(self.size.is_finite() && self.size > 0.0) {
            return bad(format!("shape size must be positive, got {}", self.size));
        }
        for v in [self.foreground, self.background] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("intensity {v} outside [0, 1]"));
            }
        }
        if self.foreground == self.background {
            return bad("foreground and background intensities must differ".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("framerate must be positive, got {}", self.fps));
        }
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return bad(format!("duration must be non-negative, got {}", self.duration_ms));
        }
        // Extreme centers: the path endpoints for linear motion, the swing
        // limits for oscillation.
        let extremes: [(f64, f64); 2] = match self.motion {
            Motion::Linear { velocity } => [
                self.start,
                (self.start.0 + velocity.0 * self.duration_ms, self.start.1 + velocity.1 * self.duration_ms),
            ],
            Motion::Oscillating { amplitude, period_ms } => {
                if !(period_ms.is_finite() && period_ms > 0.0) {
                    return bad(format!("oscillation period must be positive, got {period_ms}"));
                }
                let (ax, ay) = (amplitude.0.abs(), amplitude.1.abs());
                [(self.start.0 - ax, self.start.1 - ay), (self.start.0 + ax, self.start.1 + ay)]
            }
        };
        let (hx, hy) = self.half_extent();
        for (x, y) in extremes {
            if !(x.is_finite() && y.is_finite()) || x - hx < 0.0 || y - hy < 0.0 || x + hx > w as f64 || y + hy > h as f64 {
                return bad(format!(
                    "shape centered at ({x:.3}, {y:.3}) leaves the {w}x{h} frame during the scene"
                ));
            }
        }
        Ok(())
    }

    /// Shape center `(x, y)` at time `t` ms.
    pub fn center_at(&self, t: f64) -> (f64, f64) {
        match self.motion {
            Motion::Linear { velocity } => (self.start.0 + velocity.0 * t, self.start.1 + velocity.1 * t),
            Motion::Oscillating { amplitude, period_ms } => {
                // reduce first so whole periods map exactly onto phase 0
                let phase = t - period_ms * (t / period_ms).floor();
                let s = (core::f64::consts::TAU * phase / period_ms).sin();
                (self.start.0 + amplitude.0 * s, self.start.1 + amplitude.1 * s)
            }
        }
    }

    /// Frames recorded over the duration: `max(1, ceil(duration * fps / 1000))`.
    pub fn frame_count(&self) -> usize {
        let exact = self.duration_ms * self.fps / 1000.0;
        ((exact - 1e-9).ceil().max(0.0) as usize).max(1)
    }

    /// Fraction of pixel `(row, col)` covered by the shape centered at `center`.
    fn coverage(&self, center: (f64, f64), row: usize, col: usize) -> f64 {
        let (x0, y0) = (col as f64 - center.0, row as f64 - center.1);
        let (x1, y1) = (x0 + 1.0, y0 + 1.0);
        match self.shape {
            ShapeKind::Square | ShapeKind::Bar => {
                let (hx, hy) = self.half_extent();
                overlap(-hx, hx, x0, x1) * overlap(-hy, hy, y0, y1)
            }
            ShapeKind::Disk => {
                let r = self.size / 2.0;
                let area = disk_below_left(x1, y1, r) - disk_below_left(x0, y1, r) - disk_below_left(x1, y0, r)
                    + disk_below_left(x0, y0, r);
                area.clamp(0.0, 1.0)
            }
        }
    }

    /// Renders the scene at `t` ms, `0 <= t <= duration_ms`.
    pub fn render(&self, t: f64) -> Result<Frame> {
        self.validate()?;
        if !(t >= 0.0 && t <= self.duration_ms) {
            return Err(Error::Domain(format!("time {t} ms outside the scene's [0, {}] ms", self.duration_ms)));
        }
        let (h, w) = self.resolution;
        let center = self.center_at(t);
        let (hx, hy) = self.half_extent();
        let cols = pixel_span(center.0 - hx, center.0 + hx, w);
        let rows = pixel_span(center.1 - hy, center.1 + hy, h);
        let contrast = f64::from(self.foreground) - f64::from(self.background);
        let mut pixels = alloc::vec![self.background; h * w];
        for row in rows.clone() {
            for col in cols.clone() {
                let c = self.coverage(center, row, col);
                pixels[row * w + col] = (f64::from(self.background) + contrast * c) as f32;
            }
        }
        Frame::new(h, w, pixels)
    }
}

/// Length of `[a0, a1] ∩ [b0, b1]`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn pixel_span(lo: f64, hi: f64, len: usize) -> core::ops::Range<usize> {
    let start = lo.floor().max(0.0) as usize;
    let end = (hi.ceil().max(0.0) as usize).min(len);
    start.min(end)..end
}

/// `∫ sqrt(r² - X²) dX` over `[lo, hi] ∩ [-r, r]`.
fn chord_half_integral(r: f64, lo: f64, hi: f64) -> f64 {
    let antiderivative = |x: f64| {
        let x = x.clamp(-r, r);
        0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).clamp(-1.0, 1.0).asin())
    };
    let (lo, hi) = (lo.max(-r), hi.min(r));
    if hi <= lo {
        0.0
    } else {
        antiderivative(hi) - antiderivative(lo)
    }
}

/// Area of the origin-centered disk of radius `r` inside `{X <= x, Y <= y}`.
fn disk_below_left(x: f64, y: f64, r: f64) -> f64 {
    let xc = x.min(r);
    if xc <= -r || y <= -r {
        return 0.0;
    }
    if y >= r {
        return 2.0 * chord_half_integral(r, -r, xc);
    }
    // Columns with |X| < a have chord ends on both sides of y.
    let a = (r * r - y * y).sqrt();
    let inner = chord_half_integral(r, -a, xc.min(a)) + y * (xc.min(a) - (-a)).max(0.0);
    if y >= 0.0 {
        let outer = chord_half_integral(r, -r, xc.min(-a)) + chord_half_integral(r, a, xc);
        2.0 * outer + inner
    } else {
        inner
    }
}

/// Generator for a corpus of synthetic recordings with randomized start
/// positions, one action label and several videos per pseudo-actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    #[serde(default = "default_action")]
    pub action: ActionLabel,
    pub actors: usize,
    pub videos_per_actor: usize,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub fps: f64,
    pub duration_ms: f64,
    pub shape: ShapeKind,
    pub size: f64,
    pub motion: Motion,
    pub foreground: f32,
    pub background: f32,
    /// Inclusive ranges the start center is drawn from.
    pub start_x: (f64, f64),
    pub start_y: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_action() -> ActionLabel {
    ActionLabel::Walking
}

/// Output of [`SyntheticCorpusSpec::generate`].
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: VideoCorpus,
    pub segments: Vec<ActionSegment>,
    /// Scene of every video, in the order of `segments`' video ids.
    pub scenes: Vec<(alloc::string::String, SyntheticSceneSpec)>,
}

impl SyntheticCorpusSpec {
    /// 64x64 bright square moving right at 0.25 px/ms, 25 fps, six frames
    /// (0 to 200 ms) per video.
    pub fn moving_square_64() -> Self {
        Self {
            action: ActionLabel::Walking,
            actors: 10,
            videos_per_actor: 20,
            resolution: (64, 64),
            fps: 25.0,
            duration_ms: 204.0,
            shape: ShapeKind::Square,
            size: 8.0,
            motion: Motion::Linear { velocity: (0.25, 0.0) },
            foreground: 1.0,
            background: 0.0,
            start_x: (4.0, 9.0),
            start_y: (4.0, 60.0),
            seed: 0,
        }
    }

    pub fn actor_id(index: usize) -> alloc::string::String {
        format!("actor{:02}", index + 1)
    }

    pub fn video_id(&self, actor: usize, video: usize) -> alloc::string::String {
        format!("{}_{}_d{}", Self::actor_id(actor), self.action, video + 1)
    }

    /// Scene with the given start center and this spec's other settings.
    pub fn scene_at(&self, start: (f64, f64)) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            shape: self.shape,
            size: self.size,
            start,
            motion: self.motion,
            foreground: self.foreground,
            background: self.background,
            fps: self.fps,
            duration_ms: self.duration_ms,
            resolution: self.resolution,
        }
    }

    pub fn generate(&self) -> Result<SyntheticCorpus> {
        if self.actors == 0 || self.videos_per_actor == 0 {
            return Err(Error::Config("synthetic corpus needs at least one actor and one video".into()));
        }
        for (lo, hi) in [self.start_x, self.start_y] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("start range ({lo}, {hi}) is empty")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut corpus = VideoCorpus::new();
        let mut segments = Vec::new();
        let mut scenes = Vec::new();
        for actor in 0..self.actors {
            for video in 0..self.videos_per_actor {
                let start = (rng.gen_range(self.start_x.0..=self.start_x.1), rng.gen_range(self.start_y.0..=self.start_y.1));
                let scene = self.scene_at(start);
                scene.validate()?;
                let frames = (0..scene.frame_count())
                    .map(|i| scene.render(frame_time(i as u64, scene.fps)?))
                    .collect::<Result<Vec<_>>>()?;
                let video_id = self.video_id(actor, video);
                if frames.len() >= 2 {
                    segments.push(ActionSegment {
                        video_id: video_id.clone(),
                        actor_id: Self::actor_id(actor),
                        action: self.action,
                        start_frame: 0,
                        end_frame: frames.len() - 1,
                        fps: self.fps,
                    });
                }
                corpus.insert(Video {
                    video_id: video_id.clone(),
                    actor_id: Self::actor_id(actor),
                    action: self.action,
                    fps: self.fps,
                    frames,
                })?;
                scenes.push((video_id, scene));
            }
        }
        Ok(SyntheticCorpus { corpus, segments, scenes })
    }
}
