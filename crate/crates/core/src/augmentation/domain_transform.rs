//! Edge-aware recursive filtering in the transformed domain.
//!
//! Each scanline is remapped by `ct(x) = sum_{u <= x} (1 + sigma_s/sigma_r *
//! sum_c |I_c(u) - I_c(u-1)|)` with `ct(0) = 0`. A first-order recursive
//! filter then runs along the remapped coordinate: the feedback between two
//! neighbors is `a^(ct(x) - ct(x-1))`, so a strong guide edge cuts the filter.

use crate::augmentation::{positive, SparseBlurMap};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::kernels::{BlurField, MAX_RADIUS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtConfig {
    /// Spatial standard deviation, in pixels.
    pub sigma_s: f64,
    /// Range standard deviation, in intensity units.
    pub sigma_r: f64,
    pub iterations: usize,
}

impl Default for DtConfig {
    fn default() -> Self {
        Self {
            sigma_s: 60.0,
            sigma_r: 0.4,
            iterations: 3,
        }
    }
}

impl DtConfig {
    fn validate(&self) -> Result<()> {
        if !positive(self.sigma_s) || !positive(self.sigma_r) || self.iterations == 0 {
            return Err(Error::InvalidParameter(format!(
                "domain transform config must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Standard deviation of iteration `i`; halves each iteration while the
    /// total variance stays `sigma_s^2`.
    pub fn iteration_sigma(&self, i: usize) -> f64 {
        let n = self.iterations as i32;
        self.sigma_s * 3f64.sqrt() * 2f64.powi(n - (i as i32 + 1)) / (4f64.powi(n) - 1.0).sqrt()
    }
}

/// Feedback coefficient of the recursive filter for standard deviation `sigma`.
pub fn feedback_coefficient(sigma: f64) -> f64 {
    (-(2f64.sqrt()) / sigma).exp()
}

/// Cumulative transformed coordinates along rows and along columns, both
/// stored row-major over the image grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainTransform {
    height: usize,
    width: usize,
    horizontal: Vec<f64>,
    vertical: Vec<f64>,
}

impl DomainTransform {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `ct` along row `y`.
    pub fn row(&self, y: usize) -> &[f64] {
        &self.horizontal[y * self.width..(y + 1) * self.width]
    }

    /// `ct` along column `x`.
    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.height)
            .map(|y| self.vertical[y * self.width + x])
            .collect()
    }
}

pub fn domain_transform(guide: &ImageGrid, cfg: &DtConfig) -> Result<DomainTransform> {
    cfg.validate()?;
    let (h, w) = (guide.height(), guide.width());
    let ratio = cfg.sigma_s / cfg.sigma_r;
    let mut horizontal = vec![0.0; h * w];
    let mut vertical = vec![0.0; h * w];
    for y in 0..h {
        for x in 1..w {
            let grad: f64 = guide
                .planes()
                .map(|p| (p[y * w + x] - p[y * w + x - 1]).abs())
                .sum();
            horizontal[y * w + x] = horizontal[y * w + x - 1] + 1.0 + ratio * grad;
        }
    }
    for y in 1..h {
        for x in 0..w {
            let grad: f64 = guide
                .planes()
                .map(|p| (p[y * w + x] - p[(y - 1) * w + x]).abs())
                .sum();
            vertical[y * w + x] = vertical[(y - 1) * w + x] + 1.0 + ratio * grad;
        }
    }
    Ok(DomainTransform {
        height: h,
        width: w,
        horizontal,
        vertical,
    })
}

/// One left-to-right then right-to-left recursive pass over every row.
pub fn filter_rows(data: &mut [f64], dt: &DomainTransform, a: f64) {
    let w = dt.width;
    for (row, ct) in data.chunks_exact_mut(w).zip(dt.horizontal.chunks_exact(w)) {
        for x in 1..w {
            let f = a.powf(ct[x] - ct[x - 1]);
            row[x] += f * (row[x - 1] - row[x]);
        }
        for x in (0..w.saturating_sub(1)).rev() {
            let f = a.powf(ct[x + 1] - ct[x]);
            row[x] += f * (row[x + 1] - row[x]);
        }
    }
}

/// One top-to-bottom then bottom-to-top recursive pass over every column.
pub fn filter_columns(data: &mut [f64], dt: &DomainTransform, a: f64) {
    let (h, w) = (dt.height, dt.width);
    for y in 1..h {
        for x in 0..w {
            let f = a.powf(dt.vertical[y * w + x] - dt.vertical[(y - 1) * w + x]);
            data[y * w + x] += f * (data[(y - 1) * w + x] - data[y * w + x]);
        }
    }
    for y in (0..h.saturating_sub(1)).rev() {
        for x in 0..w {
            let f = a.powf(dt.vertical[(y + 1) * w + x] - dt.vertical[y * w + x]);
            data[y * w + x] += f * (data[(y + 1) * w + x] - data[y * w + x]);
        }
    }
}

/// Full recursive filter: `cfg.iterations` rounds of row then column passes.
pub fn dt_filter(data: &[f64], dt: &DomainTransform, cfg: &DtConfig) -> Vec<f64> {
    let mut out = data.to_vec();
    for i in 0..cfg.iterations {
        let a = feedback_coefficient(cfg.iteration_sigma(i));
        filter_rows(&mut out, dt, a);
        filter_columns(&mut out, dt, a);
    }
    out
}

/// Mask weight below which a filtered pixel counts as unreached.
const MIN_WEIGHT: f64 = 1e-8;

/// Densifies `sparse` by normalized edge-aware filtering guided by `image`.
pub fn propagate_dt(
    sparse: &SparseBlurMap,
    image: &ImageGrid,
    cfg: &DtConfig,
) -> Result<BlurField> {
    let (h, w) = sparse.shape();
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::shape(
            format!("{h}x{w}"),
            format!("{}x{}", image.height(), image.width()),
        ));
    }
    if sparse.known_count() == 0 {
        return Err(Error::NoConstraints);
    }
    let dt = domain_transform(image, cfg)?;
    let weights: Vec<f64> = sparse
        .mask()
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    let weighted: Vec<f64> = sparse
        .values()
        .iter()
        .zip(&weights)
        .map(|(v, m)| v * m)
        .collect();
    let num = dt_filter(&weighted, &dt, cfg);
    let den = dt_filter(&weights, &dt, cfg);

    let known: Vec<(usize, f64)> = sparse
        .mask()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(p, _)| (p, sparse.values()[p]))
        .collect();
    let radii: Vec<f64> = num
        .iter()
        .zip(&den)
        .enumerate()
        .map(|(p, (n, d))| {
            let v = if *d >= MIN_WEIGHT {
                n / d
            } else {
                nearest_known(&known, p, w)
            };
            v.clamp(0.0, MAX_RADIUS)
        })
        .collect();
    BlurField::from_f64_clamped(h, w, &radii)
}

fn nearest_known(known: &[(usize, f64)], p: usize, w: usize) -> f64 {
    let (py, px) = ((p / w) as i64, (p % w) as i64);
    known
        .iter()
        .min_by_key(|(q, _)| {
            let (dy, dx) = ((q / w) as i64 - py, (q % w) as i64 - px);
            dy * dy + dx * dx
        })
        .map(|&(_, v)| v)
        .expect("at least one known pixel")
}
