use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::canny::canny;
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Edge detection and dilation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub canny_sigma: f64,
    /// Hysteresis thresholds on the normalized `[0, 1]` gradient magnitude.
    pub canny_low: f64,
    pub canny_high: f64,
    /// Side of the square structuring element; 0 and 1 leave edges as they are.
    pub dilation: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { canny_sigma: 1.4, canny_low: 0.1, canny_high: 0.2, dilation: 11 }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.canny_sigma.is_finite() && self.canny_sigma >= 0.0) {
            return Err(Error::Config(format!("canny sigma must be non-negative, got {}", self.canny_sigma)));
        }
        if !(0.0 <= self.canny_low && self.canny_low < self.canny_high && self.canny_high.is_finite()) {
            return Err(Error::Config(format!(
                "canny thresholds need 0 <= low < high, got {} and {}",
                self.canny_low, self.canny_high
            )));
        }
        Ok(())
    }
}

/// Binary mask over a frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalMask {
    height: usize,
    width: usize,
    pixels: Vec<bool>,
    positive_count: usize,
}

impl EvalMask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!("{} mask pixels for a {height}x{width} grid", pixels.len())));
        }
        let positive_count = pixels.iter().filter(|&&p| p).count();
        Ok(Self { height, width, pixels, positive_count })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn is_empty(&self) -> bool {
        self.positive_count == 0
    }

    /// Whether every positive pixel of `self` is positive in `other`.
    pub fn is_subset_of(&self, other: &EvalMask) -> bool {
        self.resolution() == other.resolution() && self.pixels.iter().zip(&other.pixels).all(|(&a, &b)| !a || b)
    }

    /// Morphological dilation with a `side x side` square covering offsets
    /// `-(side - 1) / 2 ..= side / 2` in both axes.
    pub fn dilate(&self, side: usize) -> EvalMask {
        if side <= 1 {
            return self.clone();
        }
        let (lo, hi) = ((side - 1) / 2, side / 2);
        let (h, w) = (self.height, self.width);
        // separable: a square is a row segment followed by a column segment
        let mut rows = alloc::vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                if self.pixels[r * w + c] {
                    let (from, to) = (c.saturating_sub(lo), (c + hi).min(w - 1));
                    rows[r * w + from..=r * w + to].iter_mut().for_each(|p| *p = true);
                }
            }
        }
        let mut out = alloc::vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                if rows[r * w + c] {
                    for rr in r.saturating_sub(lo)..=(r + hi).min(h - 1) {
                        out[rr * w + c] = true;
                    }
                }
            }
        }
        EvalMask::new(h, w, out).expect("same grid")
    }
}

/// Raw Canny edges of `frame`, possibly empty.
pub fn edge_map(frame: &Frame, settings: &EvalSettings) -> Result<EvalMask> {
    settings.validate()?;
    let (h, w) = frame.resolution();
    EvalMask::new(h, w, canny(frame, settings.canny_sigma, settings.canny_low, settings.canny_high))
}

/// Dilated Canny edges of the groundtruth; [`Error::EmptyMask`] when the
/// detector finds nothing.
pub fn edge_mask(groundtruth: &Frame, settings: &EvalSettings) -> Result<EvalMask> {
    let edges = edge_map(groundtruth, settings)?;
    if edges.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(edges.dilate(settings.dilation))
}

/// Mean squared difference over the positive pixels of `mask`, on `[0, 1]`
/// intensities. [`Error::EmptyMask`] for an empty mask.
pub fn masked_mse(groundtruth: &Frame, predicted: &Frame, mask: &EvalMask) -> Result<f64> {
    if groundtruth.resolution() != predicted.resolution() || groundtruth.resolution() != mask.resolution() {
        return Err(Error::Shape(format!(
            "groundtruth {:?}, prediction {:?} and mask {:?} differ",
            groundtruth.resolution(),
            predicted.resolution(),
            mask.resolution()
        )));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    for ((&g, &p), &m) in groundtruth.pixels().iter().zip(predicted.pixels()).zip(mask.pixels()) {
        if m {
            let d = f64::from(g) - f64::from(p);
            sum += d * d;
        }
    }
    Ok(sum / mask.positive_count() as f64)
}

/// Masks the groundtruth and scores the prediction in one go.
pub fn score(groundtruth: &Frame, predicted: &Frame, settings: &EvalSettings) -> Result<f64> {
    masked_mse(groundtruth, predicted, &edge_mask(groundtruth, settings)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single(h: usize, w: usize, r: usize, c: usize) -> EvalMask {
        EvalMask::new(h, w, (0..h * w).map(|i| i == r * w + c).collect()).unwrap()
    }

    #[test]
    fn dilation_geometry() {
        let d = single(20, 20, 10, 10).dilate(11);
        assert_eq!(d.positive_count(), 121);
        assert!(d.get(5, 5) && d.get(15, 15) && !d.get(4, 10) && !d.get(10, 16));
        // even sides extend one further towards larger indices
        let e = single(20, 20, 10, 10).dilate(2);
        assert_eq!(e.positive_count(), 4);
        assert!(e.get(11, 11) && !e.get(9, 9));
        assert_eq!(single(5, 5, 2, 2).dilate(0), single(5, 5, 2, 2));
        assert_eq!(single(5, 5, 2, 2).dilate(1), single(5, 5, 2, 2));
        // clipped at the border
        assert_eq!(single(20, 20, 0, 0).dilate(11).positive_count(), 36);
    }

    #[test]
    fn step_edge_mask_is_a_band() {
        let f = Frame::from_fn(30, 40, |_, c| if c >= 20 { 1.0 } else { 0.0 }).unwrap();
        let mask = edge_mask(&f, &EvalSettings::default()).unwrap();
        let cols: Vec<usize> = (0..40).filter(|&c| mask.get(15, c)).collect();
        assert_eq!(cols.len(), 11);
        let center = (cols[0] + cols[10]) as f64 / 2.0;
        assert!((center - 19.5).abs() <= 1.0, "band centered at {center}");
        assert!((0..30).all(|r| (0..40).all(|c| mask.get(r, c) == cols.contains(&c))));
    }

    #[test]
    fn undilated_mask_equals_edges() {
        let f = Frame::from_fn(30, 40, |r, c| if (8..20).contains(&r) && (10..25).contains(&c) { 0.9 } else { 0.1 }).unwrap();
        let settings = EvalSettings { dilation: 0, ..EvalSettings::default() };
        assert_eq!(edge_mask(&f, &settings).unwrap(), edge_map(&f, &settings).unwrap());
    }

    #[test]
    fn constant_frame_signals_empty_mask() {
        let f = Frame::filled(16, 16, 0.4).unwrap();
        assert_eq!(edge_mask(&f, &EvalSettings::default()), Err(Error::EmptyMask));
        let empty = EvalMask::new(16, 16, vec![false; 256]).unwrap();
        assert_eq!(masked_mse(&f, &f, &empty), Err(Error::EmptyMask));
    }

    #[test]
    fn masked_mse_examples() {
        let zeros = Frame::filled(5, 5, 0.0).unwrap();
        let ones = Frame::filled(5, 5, 1.0).unwrap();
        let ten = EvalMask::new(5, 5, (0..25).map(|i| i < 10).collect()).unwrap();
        assert_eq!(masked_mse(&zeros, &zeros, &ten).unwrap(), 0.0);
        assert_eq!(masked_mse(&zeros, &ones, &ten).unwrap(), 1.0);

        let g = Frame::filled(3, 3, 0.25).unwrap();
        let p = Frame::new(3, 3, vec![0.75, 0.25, 0.25, 0.75, 0.25, 0.25, 0.75, 0.25, 0.25]).unwrap();
        // masked: 0, 1, 3, 4; the prediction differs by 0.5 at 0 and 3
        let m = EvalMask::new(3, 3, vec![true, true, false, true, true, false, false, false, false]).unwrap();
        assert_eq!(masked_mse(&g, &p, &m).unwrap(), 0.125);
    }

    #[test]
    fn settings_validation() {
        assert!(EvalSettings::default().validate().is_ok());
        assert!(EvalSettings { canny_low: 0.3, canny_high: 0.2, ..EvalSettings::default() }.validate().is_err());
        assert!(EvalSettings { canny_low: -0.1, ..EvalSettings::default() }.validate().is_err());
    }
}
