//! Forward and backward kernels on NCHW tensors. Convolutions are lowered to
//! matrix products (im2col) and run through `matrixmultiply`.

use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// `C = A B + beta C` for row-major `C (m x n)`. `A` is `m x k`, stored
/// row-major, or transposed (stored `k x m`) when `ta`; likewise `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly the m*k, k*n and m*n elements addressed
    // by these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const SAME3: ConvGeom = ConvGeom {
        kernel: 3,
        stride: 1,
        pad: 1,
    };
    pub const DOWN2: ConvGeom = ConvGeom {
        kernel: 2,
        stride: 2,
        pad: 0,
    };

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.kernel || wp < self.kernel {
            return None;
        }
        Some((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }
}

/// Unfolds one `C x H x W` sample into `(C k k) x (Ho Wo)` columns.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with weights `[cout, cin, k, k]` and optional bias.
pub fn conv2d(
    x: &Tensor,
    weight: &[f64],
    cout: usize,
    bias: Option<&[f64]>,
    g: ConvGeom,
) -> Tensor {
    let [n, cin, h, w] = x.shape();
    let (ho, wo) = g.output_size(h, w).expect("input smaller than kernel");
    let kk = cin * g.kernel * g.kernel;
    debug_assert_eq!(weight.len(), cout * kk);
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    let mut cols = vec![0.0; kk * ho * wo];
    for i in 0..n {
        im2col(x.sample(i), cin, h, w, g, ho, wo, &mut cols);
        let dst = out.sample_mut(i);
        gemm(cout, kk, ho * wo, weight, false, &cols, false, 0.0, dst);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut dst[co * ho * wo..(co + 1) * ho * wo] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    g: ConvGeom,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [n, cin, h, w] = x.shape();
    let [_, cout, ho, wo] = grad_out.shape();
    let kk = cin * g.kernel * g.kernel;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; cout * kk];
    let mut db = vec![0.0; cout];
    let mut cols = vec![0.0; kk * ho * wo];
    let mut dcols = vec![0.0; kk * ho * wo];
    for i in 0..n {
        let go = grad_out.sample(i);
        im2col(x.sample(i), cin, h, w, g, ho, wo, &mut cols);
        gemm(cout, ho * wo, kk, go, false, &cols, true, 1.0, &mut dw);
        gemm(kk, cout, ho * wo, weight, true, go, false, 0.0, &mut dcols);
        col2im(&dcols, cin, h, w, g, ho, wo, dx.sample_mut(i));
        for (co, d) in db.iter_mut().enumerate() {
            *d += go[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

/// 2x2 transposed convolution with stride 2; weights `[cin, cout, 2, 2]`.
pub fn conv_transpose2(x: &Tensor, weight: &[f64], cout: usize) -> Tensor {
    let [n, cin, h, w] = x.shape();
    let r = cout * 4;
    debug_assert_eq!(weight.len(), cin * r);
    let hw = h * w;
    let mut out = Tensor::zeros([n, cout, 2 * h, 2 * w]);
    let mut y = vec![0.0; r * hw];
    for i in 0..n {
        gemm(r, cin, hw, weight, true, x.sample(i), false, 0.0, &mut y);
        let dst = out.sample_mut(i);
        for co in 0..cout {
            for (q, row) in y[co * 4 * hw..(co + 1) * 4 * hw]
                .chunks_exact(hw)
                .enumerate()
            {
                let (dy, dx) = (q / 2, q % 2);
                for yy in 0..h {
                    for xx in 0..w {
                        dst[(co * 2 * h + 2 * yy + dy) * 2 * w + 2 * xx + dx] = row[yy * w + xx];
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2_backward(
    x: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>) {
    let [n, cin, h, w] = x.shape();
    let cout = grad_out.channels();
    let r = cout * 4;
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![0.0; cin * r];
    let mut gy = vec![0.0; r * hw];
    for i in 0..n {
        let go = grad_out.sample(i);
        for co in 0..cout {
            for q in 0..4 {
                let (dy, dxo) = (q / 2, q % 2);
                let row = &mut gy[(co * 4 + q) * hw..(co * 4 + q + 1) * hw];
                for yy in 0..h {
                    for xx in 0..w {
                        row[yy * w + xx] = go[(co * 2 * h + 2 * yy + dy) * 2 * w + 2 * xx + dxo];
                    }
                }
            }
        }
        gemm(cin, r, hw, weight, false, &gy, false, 0.0, dx.sample_mut(i));
        gemm(cin, hw, r, x.sample(i), false, &gy, true, 1.0, &mut dw);
    }
    (dx, dw)
}

/// Per-channel statistics saved by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

fn channel_count(x: &Tensor) -> usize {
    x.batch() * x.height() * x.width()
}

/// Batch normalization with batch statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let m = channel_count(x) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += x.sample(i)[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
        }
        mean[ch] = s / m;
        let mut ss = 0.0;
        for i in 0..n {
            ss += x.sample(i)[ch * hw..(ch + 1) * hw]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
        var[ch] = ss / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        let (src, xh) = (x.sample(i), xhat.sample_mut(i));
        for ch in 0..c {
            for p in ch * hw..(ch + 1) * hw {
                xh[p] = (src[p] - mean[ch]) * inv_std[ch];
            }
        }
        let dst = y.sample_mut(i);
        for ch in 0..c {
            for p in ch * hw..(ch + 1) * hw {
                dst[p] = gamma[ch] * xhat.sample(i)[p] + beta[ch];
            }
        }
    }
    let var_unbiased = if m > 1.0 {
        var.iter().map(|v| v * m / (m - 1.0)).collect()
    } else {
        var
    };
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var_unbiased,
        },
    )
}

/// Gradients of [`batch_norm_train`]: `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_backward(
    grad_out: &Tensor,
    gamma: &[f64],
    cache: &BnCache,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = grad_out.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        let (go, xh) = (grad_out.sample(i), cache.xhat.sample(i));
        for ch in 0..c {
            for p in ch * hw..(ch + 1) * hw {
                dgamma[ch] += go[p] * xh[p];
                dbeta[ch] += go[p];
            }
        }
    }
    let mut dx = Tensor::zeros(grad_out.shape());
    for i in 0..n {
        let (go, xh) = (grad_out.sample(i), cache.xhat.sample(i));
        let dst = dx.sample_mut(i);
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch] / m;
            for p in ch * hw..(ch + 1) * hw {
                dst[p] = scale * (m * go[p] - dbeta[ch] - xh[p] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch normalization with fixed (running) statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        let (src, dst) = (x.sample(i), y.sample_mut(i));
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
            for p in ch * hw..(ch + 1) * hw {
                dst[p] = gamma[ch] * (src[p] - mean[ch]) * inv + beta[ch];
            }
        }
    }
    y
}

pub fn batch_norm_eval_backward(
    x: &Tensor,
    grad_out: &Tensor,
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        let (src, go) = (x.sample(i), grad_out.sample(i));
        let dst = dx.sample_mut(i);
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
            for p in ch * hw..(ch + 1) * hw {
                dst[p] = go[p] * gamma[ch] * inv;
                dgamma[ch] += go[p] * (src[p] - mean[ch]) * inv;
                dbeta[ch] += go[p];
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn relu_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// 2x2 average pooling with stride 2; spatial dims must be even.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    Tensor::from_fn([n, c, ho, wo], |i, ch, y, xx| {
        0.25 * (x.get(i, ch, 2 * y, 2 * xx)
            + x.get(i, ch, 2 * y, 2 * xx + 1)
            + x.get(i, ch, 2 * y + 1, 2 * xx)
            + x.get(i, ch, 2 * y + 1, 2 * xx + 1))
    })
}

pub fn avg_pool2_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Tensor {
    Tensor::from_fn(input_shape, |i, ch, y, x| {
        0.25 * grad_out.get(i, ch, y / 2, x / 2)
    })
}

/// Concatenates along channels.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, ca, h, w] = a.shape();
    let cb = b.channels();
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = out.sample_mut(i);
        dst[..ca * h * w].copy_from_slice(a.sample(i));
        dst[ca * h * w..].copy_from_slice(b.sample(i));
    }
    out
}

pub fn split_channels(grad: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = grad.shape();
    let mut a = Tensor::zeros([n, ca, h, w]);
    let mut b = Tensor::zeros([n, c - ca, h, w]);
    for i in 0..n {
        let src = grad.sample(i);
        a.sample_mut(i).copy_from_slice(&src[..ca * h * w]);
        b.sample_mut(i).copy_from_slice(&src[ca * h * w..]);
    }
    (a, b)
}
