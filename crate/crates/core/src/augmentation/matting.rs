//! Closed-form matting Laplacian and the propagation of sparse blur values
//! through it.
//!
//! For every window `w_k` fully inside the image, with color mean `mu_k` and
//! covariance `S_k`, pixels `i, j` of the window receive
//!
//! ```text
//! delta_ij - (1 + (c_i - mu_k)^T (S_k + eps/|w_k| I)^-1 (c_j - mu_k)) / |w_k|
//! ```
//!
//! Propagation solves `(L + lambda D) b = lambda D b_known`, with `D` the
//! diagonal indicator of known pixels.

use crate::augmentation::sparse::{conjugate_residual, CsrMatrix};
use crate::augmentation::{positive, SparseBlurMap};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::kernels::{BlurField, MAX_RADIUS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MattingConfig {
    /// Window half-width; 1 gives 3x3 windows.
    pub window_radius: usize,
    pub epsilon: f64,
    /// Weight of the known-value penalty.
    pub lambda: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for MattingConfig {
    fn default() -> Self {
        Self {
            window_radius: 1,
            epsilon: 1e-7,
            lambda: 100.0,
            cg_tol: 1e-6,
            cg_max_iters: 2000,
        }
    }
}

impl MattingConfig {
    fn validate(&self) -> Result<()> {
        if self.window_radius == 0
            || !positive(self.epsilon)
            || !positive(self.lambda)
            || !positive(self.cg_tol)
            || self.cg_max_iters == 0
        {
            return Err(Error::InvalidParameter(format!(
                "matting config must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Propagated field plus solver diagnostics. `converged == false` is a
/// warning: the field is still usable.
#[derive(Clone, Debug)]
pub struct MattingOutcome {
    pub field: BlurField,
    pub converged: bool,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn inverse_sym3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let c11 = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    let c12 = m[0][1] * m[2][0] - m[0][0] * m[2][1];
    let c22 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let inv_det = 1.0 / det;
    [
        [c00 * inv_det, c01 * inv_det, c02 * inv_det],
        [c01 * inv_det, c11 * inv_det, c12 * inv_det],
        [c02 * inv_det, c12 * inv_det, c22 * inv_det],
    ]
}

/// Builds the `N x N` matting Laplacian (`N = H * W`, row-major pixels) of an
/// RGB image.
pub fn matting_laplacian(image: &ImageGrid, cfg: &MattingConfig) -> Result<CsrMatrix> {
    cfg.validate()?;
    if image.channels() != 3 {
        return Err(Error::InvalidParameter(
            "the matting Laplacian needs an RGB image".into(),
        ));
    }
    let (h, w) = (image.height(), image.width());
    let r = cfg.window_radius;
    let side = 2 * r + 1;
    if h < side || w < side {
        return Err(Error::InvalidParameter(format!(
            "image {h}x{w} is smaller than the {side}x{side} matting window"
        )));
    }
    let win = side * side;
    let inv_win = 1.0 / win as f64;
    // Pixels sharing a window are at most 2r apart in each axis.
    let reach = 2 * r;
    let stencil = 2 * reach + 1;
    let slot = |dy: isize, dx: isize| {
        ((dy + reach as isize) as usize) * stencil + (dx + reach as isize) as usize
    };
    let mut acc = vec![0.0; h * w * stencil * stencil];

    let color = |p: usize| {
        [
            image.data()[p],
            image.data()[h * w + p],
            image.data()[2 * h * w + p],
        ]
    };
    let mut pix = vec![0usize; win];
    let mut dev = vec![[0.0f64; 3]; win];
    for cy in r..h - r {
        for cx in r..w - r {
            let mut k = 0;
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    pix[k] = y * w + x;
                    k += 1;
                }
            }
            let mut mu = [0.0; 3];
            for &p in &pix {
                let c = color(p);
                for a in 0..3 {
                    mu[a] += c[a];
                }
            }
            for m in &mut mu {
                *m *= inv_win;
            }
            let mut cov = [[0.0; 3]; 3];
            for (d, &p) in dev.iter_mut().zip(&pix) {
                let c = color(p);
                *d = [c[0] - mu[0], c[1] - mu[1], c[2] - mu[2]];
                for a in 0..3 {
                    for b in 0..3 {
                        cov[a][b] += d[a] * d[b];
                    }
                }
            }
            for (a, row) in cov.iter_mut().enumerate() {
                for v in row.iter_mut() {
                    *v *= inv_win;
                }
                row[a] += cfg.epsilon * inv_win;
            }
            let inv = inverse_sym3(cov);
            for i in 0..win {
                let mut t = [0.0; 3];
                for a in 0..3 {
                    t[a] = inv[a][0] * dev[i][0] + inv[a][1] * dev[i][1] + inv[a][2] * dev[i][2];
                }
                let (yi, xi) = ((pix[i] / w) as isize, (pix[i] % w) as isize);
                for j in i..win {
                    let q = t[0] * dev[j][0] + t[1] * dev[j][1] + t[2] * dev[j][2];
                    let delta = if i == j { 1.0 } else { 0.0 };
                    let v = delta - inv_win * (1.0 + q);
                    let (yj, xj) = ((pix[j] / w) as isize, (pix[j] % w) as isize);
                    acc[pix[i] * stencil * stencil + slot(yj - yi, xj - xi)] += v;
                    if i != j {
                        acc[pix[j] * stencil * stencil + slot(yi - yj, xi - xj)] += v;
                    }
                }
            }
        }
    }

    let rows = (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            let mut row = Vec::new();
            for dy in -(reach as isize)..=reach as isize {
                for dx in -(reach as isize)..=reach as isize {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    row.push((q, acc[p * stencil * stencil + slot(dy, dx)]));
                }
            }
            row
        })
        .collect();
    Ok(CsrMatrix::from_rows(rows))
}

/// Densifies `sparse` by solving the matting system guided by `image`.
pub fn propagate_matting(
    sparse: &SparseBlurMap,
    image: &ImageGrid,
    cfg: &MattingConfig,
) -> Result<MattingOutcome> {
    let (h, w) = sparse.shape();
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::shape(
            format!("{h}x{w}"),
            format!("{}x{}", image.height(), image.width()),
        ));
    }
    let known = sparse.known_count();
    if known == 0 {
        return Err(Error::NoConstraints);
    }
    let laplacian = matting_laplacian(&image.to_rgb(), cfg)?;
    let d: Vec<f64> = sparse
        .mask()
        .iter()
        .map(|&m| if m { cfg.lambda } else { 0.0 })
        .collect();
    let system = laplacian.with_added_diagonal(&d);
    let rhs: Vec<f64> = sparse
        .values()
        .iter()
        .zip(&d)
        .map(|(v, di)| di * v)
        .collect();

    // Known values where available, their mean elsewhere.
    let mean = sparse
        .values()
        .iter()
        .zip(sparse.mask())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum::<f64>()
        / known as f64;
    let x0: Vec<f64> = sparse
        .values()
        .iter()
        .zip(sparse.mask())
        .map(|(v, &m)| if m { *v } else { mean })
        .collect();

    let report = conjugate_residual(&system, &rhs, &x0, cfg.cg_tol, cfg.cg_max_iters);
    if !report.converged {
        log::warn!(
            "matting solve stopped after {} iterations at relative residual {:.3e}",
            report.iterations,
            report.relative_residual
        );
    }
    let radii: Vec<f64> = report
        .solution
        .iter()
        .map(|v| v.clamp(0.0, MAX_RADIUS))
        .collect();
    Ok(MattingOutcome {
        field: BlurField::from_f64_clamped(h, w, &radii)?,
        converged: report.converged,
        iterations: report.iterations,
        relative_residual: report.relative_residual,
    })
}
