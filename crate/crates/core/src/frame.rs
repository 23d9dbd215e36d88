//! Grayscale frames and temporal displacements.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major grayscale intensity grid with every pixel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("frame dimensions must be positive, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} frame needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!(
                "pixel {bad} has intensity {} outside [0, 1]",
                pixels[bad]
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self::new(height, width, pixels)
    }

    /// Builds a frame from 8-bit intensities, mapping `v` to `v / 255`.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    /// Quantizes to 8 bits with `round(255 * x)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| num_traits::Float::round(p * 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }
}

/// A strictly positive time offset in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TemporalDisplacement(f64);

impl TemporalDisplacement {
    pub fn from_millis(millis: f64) -> Result<Self> {
        if millis.is_finite() && millis > 0.0 {
            Ok(Self(millis))
        } else {
            Err(Error::Domain(format!("temporal displacement must be a positive finite number of ms, got {millis}")))
        }
    }

    pub fn millis(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TemporalDisplacement {
    type Error = Error;

    fn try_from(millis: f64) -> Result<Self> {
        Self::from_millis(millis)
    }
}

impl From<TemporalDisplacement> for f64 {
    fn from(dt: TemporalDisplacement) -> f64 {
        dt.0
    }
}
