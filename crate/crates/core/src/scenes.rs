//! Seeded procedural RGB scenes: flat and textured shapes over a smooth
//! background. Used for toy datasets and tests when no photographs are at hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageGrid;

enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

struct Layer {
    shape: Shape,
    color: [f64; 3],
    /// Stripe amplitude, period in pixels, orientation in radians.
    stripes: Option<(f64, f64, f64)>,
}

/// Smooth random field in roughly [-1, 1]: bilinear interpolation of a coarse
/// random lattice.
fn value_noise(rng: &mut ChaCha8Rng, height: usize, width: usize, cell: f64) -> Vec<f64> {
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        let fy = y as f64 / cell;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f64 / cell;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let g = |a: usize, b: usize| grid[a * gw + b];
            let top = g(iy, ix) * (1.0 - tx) + g(iy, ix + 1) * tx;
            let bottom = g(iy + 1, ix) * (1.0 - tx) + g(iy + 1, ix + 1) * tx;
            out[y * width + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// A deterministic `height x width` RGB scene in [0, 1].
pub fn textured_scene(height: usize, width: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let side = hf.min(wf);

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    let noise = value_noise(&mut rng, height, width, (side / 6.0).max(2.0));

    let count = 6 + (height * width / 512).min(18);
    let layers: Vec<Layer> = (0..count)
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                Shape::Disk {
                    cy: rng.random_range(0.0..hf),
                    cx: rng.random_range(0.0..wf),
                    r: rng.random_range(0.06..0.25) * side,
                }
            } else {
                let (y0, x0) = (
                    rng.random_range(-0.1..0.9) * hf,
                    rng.random_range(-0.1..0.9) * wf,
                );
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.random_range(0.1..0.45) * hf,
                    x1: x0 + rng.random_range(0.1..0.45) * wf,
                }
            };
            let color = std::array::from_fn(|_| rng.random_range(0.05..0.95));
            let stripes = rng.random_bool(0.4).then(|| {
                (
                    rng.random_range(0.08..0.2),
                    rng.random_range(3.0..9.0),
                    rng.random_range(0.0..std::f64::consts::PI),
                )
            });
            Layer {
                shape,
                color,
                stripes,
            }
        })
        .collect();

    let mut pixels = vec![[0.0f64; 3]; height * width];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let slope = (fy / hf + fx / wf) - 1.0;
            let mut c: [f64; 3] =
                std::array::from_fn(|k| base[k] + tilt[k] * slope + 0.08 * noise[p]);
            for layer in &layers {
                if layer.shape.contains(fy, fx) {
                    let t = layer
                        .stripes
                        .map(|(amp, period, theta)| {
                            let u = fy * theta.sin() + fx * theta.cos();
                            amp * (2.0 * std::f64::consts::PI * u / period).sin()
                        })
                        .unwrap_or(0.0);
                    c = std::array::from_fn(|k| layer.color[k] + t + 0.05 * noise[p]);
                }
            }
            pixels[p] = c;
        }
    }
    ImageGrid::from_fn(height, width, 3, |c, y, x| {
        pixels[y * width + x][c].clamp(0.0, 1.0)
    })
    .expect("finite scene values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::detect_edges;

    #[test]
    fn deterministic_and_in_range() {
        let a = textured_scene(40, 56, 9);
        let b = textured_scene(40, 56, 9);
        assert_eq!(a, b);
        assert!(a.is_unit_range());
        assert_ne!(a, textured_scene(40, 56, 10));
    }

    #[test]
    fn edge_density_is_moderate() {
        for seed in 0..8 {
            let img = textured_scene(64, 64, seed);
            let density = detect_edges(&img, 0.05, 0.15).unwrap().density();
            assert!(
                (0.01..=0.30).contains(&density),
                "seed {seed}: density {density}"
            );
        }
    }
}
