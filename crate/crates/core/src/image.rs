//! Planar floating-point images.

use crate::error::{Error, Result};

/// An `H x W x C` image with real-valued samples.
///
/// Samples are stored channel-planar (`c`, then row, then column), which keeps
/// every per-channel filter a contiguous slice operation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(height, width, channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        })
    }

    pub fn from_planar(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} samples", height * width * channels),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample {v}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_planar(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.pixels())
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rounds every sample to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Rec. 601 luma for RGB images, the plane itself for grayscale.
    pub fn luminance(&self) -> Vec<f64> {
        match self.channels {
            3 => {
                let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
                r.iter()
                    .zip(g)
                    .zip(b)
                    .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
                    .collect()
            }
            _ => self.plane(0).to_vec(),
        }
    }

    /// Replicates a single-channel image into three identical channels.
    pub fn to_rgb(&self) -> ImageGrid {
        if self.channels == 3 {
            return self.clone();
        }
        let p = self.plane(0);
        let mut data = Vec::with_capacity(p.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(p);
        }
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear resampling with pixel-center alignment and clamped borders.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<ImageGrid> {
        check_dims(height, width, self.channels)?;
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let taps = |dst: usize, scale: f64, len: usize| {
            let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, pos - lo as f64)
        };
        let rows: Vec<_> = (0..height).map(|y| taps(y, sy, self.height)).collect();
        let cols: Vec<_> = (0..width).map(|x| taps(x, sx, self.width)).collect();
        let mut out = ImageGrid::new(height, width, self.channels)?;
        for c in 0..self.channels {
            for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        Ok(out)
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter(format!(
            "images have 1 or 3 channels, got {channels}"
        )));
    }
    Ok(())
}

/// Correlates one plane with a square, odd-sized kernel using edge
/// replication at the borders.
pub fn correlate_replicate(
    src: &[f64],
    height: usize,
    width: usize,
    kernel: &[f64],
    size: usize,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), height * width);
    debug_assert_eq!(kernel.len(), size * size);
    let mut out = vec![0.0; src.len()];
    for (y, row) in out.chunks_exact_mut(width).enumerate() {
        for (x, o) in row.iter_mut().enumerate() {
            *o = correlate_at(src, height, width, kernel, size, y, x);
        }
    }
    out
}

/// Value of [`correlate_replicate`] at a single pixel. Both the dense and the
/// per-pixel paths go through this function so their summation order agrees.
#[inline]
pub fn correlate_at(
    src: &[f64],
    height: usize,
    width: usize,
    kernel: &[f64],
    size: usize,
    y: usize,
    x: usize,
) -> f64 {
    let r = (size / 2) as isize;
    let mut acc = 0.0;
    for i in 0..size {
        let sy = (y as isize + i as isize - r).clamp(0, height as isize - 1) as usize;
        let src_row = &src[sy * width..(sy + 1) * width];
        let k_row = &kernel[i * size..(i + 1) * size];
        for (j, &k) in k_row.iter().enumerate() {
            let sx = (x as isize + j as isize - r).clamp(0, width as isize - 1) as usize;
            acc += k * src_row[sx];
        }
    }
    acc
}

/// Separable box filter of half-width `radius` with edge replication.
pub fn box_filter_replicate(src: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    let n = (2 * radius + 1) as f64;
    let r = radius as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for d in -r..=r {
                acc += row[(x as isize + d).clamp(0, width as isize - 1) as usize];
            }
            tmp[y * width + x] = acc / n;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for d in -r..=r {
                let sy = (y as isize + d).clamp(0, height as isize - 1) as usize;
                acc += tmp[sy * width + x];
            }
            out[y * width + x] = acc / n;
        }
    }
    out
}
