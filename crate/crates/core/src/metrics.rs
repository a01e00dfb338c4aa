//! Image-quality measures and the SSIM training loss.
//!
//! SSIM uses Gaussian-weighted local statistics evaluated only at window
//! positions fully inside the image (no padding). The same routine provides
//! the gradient of the per-channel SSIM with respect to the first argument,
//! which the network trainer back-propagates.

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::kernels::BlurField;

/// PSNR reported in place of +inf for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParameter("SSIM window must be odd".into()));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidParameter(
                "SSIM constants must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    pub fn window_1d(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / total).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimReport {
    pub per_channel: Vec<f64>,
    pub mean: f64,
}

/// Valid-region separable correlation: output is `(h-s+1) x (w-s+1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let s = g.len();
    let (oh, ow) = (h + 1 - s, w + 1 - s);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + s]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, gi) in g.iter().enumerate() {
                acc += gi * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let s = g.len();
    let (oh, ow) = (h + 1 - s, w + 1 - s);
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for (i, gi) in g.iter().enumerate() {
                rows[(y + i) * ow + x] += gi * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for (j, gj) in g.iter().enumerate() {
                out[y * w + x + j] += gj * v;
            }
        }
    }
    out
}

/// SSIM of one channel pair and, optionally, its gradient with respect to `x`.
pub fn ssim_plane(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    cfg.validate()?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs at least {0}x{0} pixels, got {h}x{w}",
            cfg.window
        )));
    }
    let g = cfg.window_1d();
    let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let sxx = filter_valid(&sq(x, x), h, w, &g);
    let syy = filter_valid(&sq(y, y), h, w, &g);
    let sxy = filter_valid(&sq(x, y), h, w, &g);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let p = mx.len();
    let inv_p = 1.0 / p as f64;

    let mut total = 0.0;
    let (mut ga, mut gb, mut gc) = if want_grad {
        (vec![0.0; p], vec![0.0; p], vec![0.0; p])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for k in 0..p {
        let (ux, uy) = (mx[k], my[k]);
        let vx = sxx[k] - ux * ux;
        let vy = syy[k] - uy * uy;
        let cxy = sxy[k] - ux * uy;
        let a1 = 2.0 * ux * uy + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = ux * ux + uy * uy + c1;
        let b2 = vx + vy + c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            ga[k] =
                inv_p * (2.0 * uy * (a2 - a1) / (b1 * b2) - 2.0 * ux * s * (1.0 / b1 - 1.0 / b2));
            gb[k] = inv_p * (-s / b2);
            gc[k] = inv_p * (2.0 * a1 / (b1 * b2));
        }
    }
    let value = total * inv_p;
    if !want_grad {
        return Ok((value, None));
    }
    let ta = filter_valid_adjoint(&ga, h, w, &g);
    let tb = filter_valid_adjoint(&gb, h, w, &g);
    let tc = filter_valid_adjoint(&gc, h, w, &g);
    let grad = (0..h * w)
        .map(|i| ta[i] + 2.0 * x[i] * tb[i] + y[i] * tc[i])
        .collect();
    Ok((value, Some(grad)))
}

/// Per-channel SSIM and its mean.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, cfg: &SsimConfig) -> Result<SsimReport> {
    a.same_shape(b)?;
    let per_channel = (0..a.channels())
        .map(|c| ssim_plane(a.plane(c), b.plane(c), a.height(), a.width(), cfg, false).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_channel.iter().sum::<f64>() / per_channel.len() as f64;
    Ok(SsimReport { per_channel, mean })
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR in dB for unit dynamic range; `+inf` for identical images.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Formats a `(ssim, psnr)` pair as `0.902/26.62`, capping PSNR at [`PSNR_CAP`].
pub fn format_ssim_psnr(ssim: f64, psnr: f64) -> String {
    format!("{:.3}/{:.2}", ssim, psnr.min(PSNR_CAP))
}

/// Mean absolute difference of two blur fields, in pixels of radius.
pub fn mae_blur(a: &BlurField, b: &BlurField) -> Result<f64> {
    a.same_shape(b)?;
    let sum: f64 = a
        .radii()
        .iter()
        .zip(b.radii())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum();
    Ok(sum / a.radii().len() as f64)
}

/// Batch loss from per-image, per-channel SSIM values:
/// `mean over images of (1 - mean over channels of SSIM)`.
pub fn loss_from_channel_ssims(per_image: &[Vec<f64>]) -> Result<f64> {
    if per_image.is_empty() {
        return Err(Error::EmptyInput("loss batch is empty".into()));
    }
    let mut total = 0.0;
    for channels in per_image {
        if channels.is_empty() {
            return Err(Error::EmptyInput("image without channels".into()));
        }
        total += 1.0 - channels.iter().sum::<f64>() / channels.len() as f64;
    }
    Ok(total / per_image.len() as f64)
}

/// SSIM loss over `(prediction, target)` pairs of 3-channel images.
pub fn ssim_loss(pairs: &[(&ImageGrid, &ImageGrid)], cfg: &SsimConfig) -> Result<f64> {
    let per_image = pairs
        .iter()
        .map(|(p, t)| {
            if p.channels() != 3 {
                return Err(Error::InvalidParameter(
                    "the SSIM loss expects RGB images".into(),
                ));
            }
            ssim(p, t, cfg).map(|r| r.per_channel)
        })
        .collect::<Result<Vec<_>>>()?;
    loss_from_channel_ssims(&per_image)
}

/// SSIM loss and its gradient with respect to each prediction.
pub fn ssim_loss_with_grad(
    pairs: &[(&ImageGrid, &ImageGrid)],
    cfg: &SsimConfig,
) -> Result<(f64, Vec<ImageGrid>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("loss batch is empty".into()));
    }
    let m = pairs.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for (pred, target) in pairs {
        pred.same_shape(target)?;
        let (h, w, c) = pred.shape();
        let mut grad = ImageGrid::new(h, w, c)?;
        let mut mean_ssim = 0.0;
        for ch in 0..c {
            let (s, g) = ssim_plane(pred.plane(ch), target.plane(ch), h, w, cfg, true)?;
            mean_ssim += s / c as f64;
            let scale = -1.0 / (c as f64 * m);
            for (d, gv) in grad
                .plane_mut(ch)
                .iter_mut()
                .zip(g.expect("gradient requested"))
            {
                *d = scale * gv;
            }
        }
        loss += (1.0 - mean_ssim) / m;
        grads.push(grad);
    }
    Ok((loss, grads))
}
