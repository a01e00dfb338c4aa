//! Gradient-magnitude edge detection with non-maximum suppression and
//! hysteresis on the luminance channel.

use crate::error::{Error, Result};
use crate::image::{correlate_replicate, ImageGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeConfig {
    pub low: f64,
    pub high: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            low: 0.05,
            high: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl EdgeMask {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::shape(height * width, mask.len()));
        }
        Ok(Self {
            height,
            width,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of pixels marked as edges.
    pub fn density(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.mask.len() as f64
    }
}

const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// Sobel gradients of `plane`, scaled by 1/4 so a unit step has magnitude 1.
pub fn sobel(plane: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let gx = correlate_replicate(plane, height, width, &SOBEL_X, 3);
    let gy = correlate_replicate(plane, height, width, &SOBEL_Y, 3);
    (
        gx.into_iter().map(|v| v / 4.0).collect(),
        gy.into_iter().map(|v| v / 4.0).collect(),
    )
}

/// Edge pixels of `image` for hysteresis thresholds `low < high`.
pub fn detect_edges(image: &ImageGrid, low: f64, high: f64) -> Result<EdgeMask> {
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
        return Err(Error::InvalidParameter(format!(
            "edge thresholds need 0 <= low < high <= 1, got low={low} high={high}"
        )));
    }
    let (h, w) = (image.height(), image.width());
    let lum = image.luminance();
    let (gx, gy) = sobel(&lum, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // Thin ridges: keep a pixel only if it beats the neighbor behind it along
    // the gradient and at least ties the one ahead. The asymmetric tie keeps
    // exactly one pixel of a two-pixel plateau.
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let m = mag[p];
            if m == 0.0 {
                continue;
            }
            let angle = gy[p].atan2(gx[p]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let behind = at(yi - dy, xi - dx);
            let ahead = at(yi + dy, xi + dx);
            if m > behind && m >= ahead {
                thin[p] = m;
            }
        }
    }

    let mut mask = vec![false; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&p| thin[p] >= high).collect();
    for &p in &stack {
        mask[p] = true;
    }
    while let Some(p) = stack.pop() {
        let (y, x) = ((p / w) as isize, (p % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !mask[q] && thin[q] >= low {
                    mask[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    EdgeMask::new(h, w, mask)
}
