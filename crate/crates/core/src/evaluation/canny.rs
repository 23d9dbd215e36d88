//! Canny edge detection on `[0, 1]` frames.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::frame::Frame;

/// Largest Sobel magnitude a `[0, 1]` image can produce; magnitudes are
/// divided by it so thresholds live on a `[0, 1]` scale.
pub const SOBEL_MAX: f64 = 4.0 * core::f64::consts::SQRT_2;

/// tan(22.5 deg), the boundary between axis-aligned and diagonal directions.
const TAN_22_5: f64 = 0.414_213_562_373_095_03;

struct Grid<'a> {
    data: &'a [f64],
    h: usize,
    w: usize,
}

impl Grid<'_> {
    /// Value with replicated borders.
    fn at(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.h as isize - 1) as usize;
        let c = c.clamp(0, self.w as isize - 1) as usize;
        self.data[r * self.w + c]
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = Float::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| Float::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    let src = Grid { data, h, w };
    for r in 0..h {
        for c in 0..w {
            rows[r * w + c] =
                kernel.iter().enumerate().map(|(i, k)| k * src.at(r as isize, c as isize + i as isize - radius)).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    let tmp = Grid { data: &rows, h, w };
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] =
                kernel.iter().enumerate().map(|(i, k)| k * tmp.at(r as isize + i as isize - radius, c as isize)).sum();
        }
    }
    out
}

/// Normalized Sobel magnitude and the pair of neighbor offsets along the
/// gradient direction, per pixel.
fn sobel(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<[(isize, isize); 2]>) {
    let g = Grid { data, h, w };
    let mut magnitude = vec![0.0; h * w];
    let mut neighbors = vec![[(0, 0); 2]; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (g.at(r - 1, c + 1) + 2.0 * g.at(r, c + 1) + g.at(r + 1, c + 1))
                - (g.at(r - 1, c - 1) + 2.0 * g.at(r, c - 1) + g.at(r + 1, c - 1));
            let gy = (g.at(r + 1, c - 1) + 2.0 * g.at(r + 1, c) + g.at(r + 1, c + 1))
                - (g.at(r - 1, c - 1) + 2.0 * g.at(r - 1, c) + g.at(r - 1, c + 1));
            let i = r as usize * w + c as usize;
            magnitude[i] = Float::sqrt(gx * gx + gy * gy) / SOBEL_MAX;
            // (row, col) steps against and along the gradient
            neighbors[i] = if gy.abs() <= TAN_22_5 * gx.abs() {
                [(0, -1), (0, 1)]
            } else if gx.abs() <= TAN_22_5 * gy.abs() {
                [(-1, 0), (1, 0)]
            } else if (gx > 0.0) == (gy > 0.0) {
                [(-1, -1), (1, 1)]
            } else {
                [(-1, 1), (1, -1)]
            };
        }
    }
    (magnitude, neighbors)
}

/// Thin ridges: a pixel survives if it beats the neighbor behind it along
/// the gradient and ties or beats the one ahead, so a symmetric two-pixel
/// ridge keeps exactly one pixel.
fn non_max_suppression(magnitude: &[f64], neighbors: &[[(isize, isize); 2]], h: usize, w: usize) -> Vec<f64> {
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            magnitude[r as usize * w + c as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let m = magnitude[i];
            let [(br, bc), (ar, ac)] = neighbors[i];
            let (ri, ci) = (r as isize, c as isize);
            if m > at(ri + br, ci + bc) && m >= at(ri + ar, ci + ac) {
                out[i] = m;
            }
        }
    }
    out
}

/// Pixels at or above `high`, plus pixels at or above `low` 8-connected to them.
fn hysteresis(thin: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<bool> {
    let mut edges = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > 0.0 && m >= high {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if !edges[j] && thin[j] > 0.0 && thin[j] >= low {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}

/// Binary edge map, row-major.
pub fn canny(frame: &Frame, sigma: f64, low: f64, high: f64) -> Vec<bool> {
    let (h, w) = frame.resolution();
    let data: Vec<f64> = frame.pixels().iter().map(|&p| f64::from(p)).collect();
    let smooth = gaussian_blur(&data, h, w, sigma);
    let (magnitude, neighbors) = sobel(&smooth, h, w);
    let thin = non_max_suppression(&magnitude, &neighbors, h, w);
    hysteresis(&thin, h, w, low, high)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn columns(edges: &[bool], w: usize) -> Vec<usize> {
        let mut cols: Vec<usize> = edges.iter().enumerate().filter(|(_, &e)| e).map(|(i, _)| i % w).collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.4);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[10]);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn constant_frame_has_no_edges() {
        let f = Frame::filled(20, 20, 0.7).unwrap();
        assert!(canny(&f, 1.4, 0.1, 0.2).iter().all(|e| !e));
    }

    #[test]
    fn vertical_step_gives_one_column() {
        let f = Frame::from_fn(24, 30, |_, c| if c >= 15 { 1.0 } else { 0.0 }).unwrap();
        let edges = canny(&f, 1.4, 0.1, 0.2);
        assert_eq!(columns(&edges, 30), vec![14]);
        assert_eq!(edges.iter().filter(|&&e| e).count(), 24);
    }

    #[test]
    fn horizontal_step_gives_one_row() {
        let f = Frame::from_fn(24, 30, |r, _| if r >= 9 { 0.0 } else { 0.8 }).unwrap();
        let edges = canny(&f, 1.4, 0.1, 0.2);
        let rows: Vec<usize> = (0..24).filter(|r| edges[r * 30..(r + 1) * 30].iter().any(|&e| e)).collect();
        assert_eq!(rows, vec![8]);
    }

    #[test]
    fn faint_steps_fall_below_threshold() {
        let f = Frame::from_fn(24, 30, |_, c| if c >= 15 { 0.1 } else { 0.0 }).unwrap();
        assert!(canny(&f, 1.4, 0.1, 0.2).iter().all(|e| !e));
    }

    #[test]
    fn magnitude_normalization() {
        // unblurred unit step: |gx| = 4 at the two columns beside the jump
        let data: Vec<f64> = (0..25).map(|i| if i % 5 >= 3 { 1.0 } else { 0.0 }).collect();
        let (m, _) = sobel(&data, 5, 5);
        assert!((m[2] - 4.0 / SOBEL_MAX).abs() < 1e-12);
        assert_eq!(m[0], 0.0);
    }
}
