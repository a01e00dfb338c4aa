//! Disk point-spread functions, the quantized blur-scale set, and the
//! parametric bank of spatially-varying blur fields.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest supported disk radius in pixels.
pub const MAX_RADIUS: f64 = 6.0;
/// Number of quantized blur scales.
pub const SCALE_COUNT: usize = 23;
/// Smallest scale in the set.
pub const FIRST_SCALE: f64 = 0.5;
/// Gap between consecutive scales.
pub const SCALE_STEP: f64 = 0.25;
/// Subsamples per pixel side used when building the standard kernels.
pub const DEFAULT_SUPERSAMPLE: usize = 64;
/// Radii at or below this threshold quantize to the identity kernel.
pub const IDENTITY_THRESHOLD: f64 = FIRST_SCALE - SCALE_STEP / 2.0;

/// The 23 disk radii `0.5, 0.75, ..., 6.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurScaleSet {
    scales: [f64; SCALE_COUNT],
}

/// Result of snapping a continuous radius onto the scale set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantized {
    /// Scale index, or `None` for the identity (delta) kernel.
    pub index: Option<usize>,
    /// Radius of the selected kernel (0 for identity).
    pub radius: f64,
}

pub fn make_scale_set() -> BlurScaleSet {
    let mut scales = [0.0; SCALE_COUNT];
    for (i, s) in scales.iter_mut().enumerate() {
        *s = FIRST_SCALE + SCALE_STEP * i as f64;
    }
    BlurScaleSet { scales }
}

impl Default for BlurScaleSet {
    fn default() -> Self {
        make_scale_set()
    }
}

impl BlurScaleSet {
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        SCALE_COUNT
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.scales.get(index).copied()
    }

    pub fn contains(&self, radius: f64) -> bool {
        self.scales.contains(&radius)
    }

    /// Nearest scale to `radius`; ties round toward the smaller scale, radii
    /// up to [`IDENTITY_THRESHOLD`] map to the identity kernel and radii past
    /// the last scale clamp to it.
    pub fn quantize(&self, radius: f64) -> Quantized {
        if radius.is_nan() || radius <= IDENTITY_THRESHOLD {
            return Quantized {
                index: None,
                radius: 0.0,
            };
        }
        let pos = (radius - FIRST_SCALE) / SCALE_STEP;
        // ceil(pos - 0.5) rounds half-integers down.
        let index = ((pos - 0.5).ceil().max(0.0) as usize).min(SCALE_COUNT - 1);
        Quantized {
            index: Some(index),
            radius: self.scales[index],
        }
    }
}

pub fn quantize_radius(radius: f64, set: &BlurScaleSet) -> Quantized {
    set.quantize(radius)
}

/// Normalized disk PSF on an odd square support.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskKernel {
    radius: f64,
    support: usize,
    weights: Vec<f64>,
}

impl DiskKernel {
    pub fn identity() -> Self {
        Self {
            radius: 0.0,
            support: 1,
            weights: vec![1.0],
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Side length of the square support.
    pub fn support(&self) -> usize {
        self.support
    }

    /// Row-major weights, `support * support` entries.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.support + col]
    }

    pub fn is_identity(&self) -> bool {
        self.support == 1
    }
}

/// Builds the disk kernel of `radius` pixels. Each weight is the fraction of
/// its pixel covered by the disk, estimated from `supersample^2` midpoint
/// samples, and the kernel is then normalized to unit sum.
pub fn make_disk_kernel(radius: f64, supersample: usize) -> Result<DiskKernel> {
    if !radius.is_finite() || !(0.0..=MAX_RADIUS).contains(&radius) {
        return Err(Error::RadiusOutOfRange(radius));
    }
    if supersample == 0 {
        return Err(Error::InvalidParameter(
            "supersample must be at least 1".into(),
        ));
    }
    if radius == 0.0 {
        return Ok(DiskKernel::identity());
    }
    let half = radius.ceil() as usize;
    let support = 2 * half + 1;
    let r2 = radius * radius;
    let offsets: Vec<f64> = (0..supersample)
        .map(|k| (k as f64 + 0.5) / supersample as f64 - 0.5)
        .collect();

    let mut weights = vec![0.0; support * support];
    for row in 0..support {
        let cy = row as f64 - half as f64;
        for col in 0..support {
            let cx = col as f64 - half as f64;
            let mut hits = 0usize;
            for oy in &offsets {
                let y = cy + oy;
                for ox in &offsets {
                    let x = cx + ox;
                    if x * x + y * y <= r2 {
                        hits += 1;
                    }
                }
            }
            weights[row * support + col] = hits as f64;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(DiskKernel {
        radius,
        support,
        weights,
    })
}

/// One kernel per scale, plus the identity kernel.
#[derive(Clone, Debug)]
pub struct KernelBank {
    scales: BlurScaleSet,
    kernels: Vec<DiskKernel>,
    identity: DiskKernel,
}

impl KernelBank {
    pub fn new(supersample: usize) -> Result<Self> {
        let scales = make_scale_set();
        let kernels = scales
            .scales()
            .iter()
            .map(|&r| make_disk_kernel(r, supersample))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scales,
            kernels,
            identity: DiskKernel::identity(),
        })
    }

    /// Shared bank built at [`DEFAULT_SUPERSAMPLE`].
    pub fn standard() -> &'static KernelBank {
        static BANK: OnceLock<KernelBank> = OnceLock::new();
        BANK.get_or_init(|| KernelBank::new(DEFAULT_SUPERSAMPLE).expect("standard radii are valid"))
    }

    pub fn scales(&self) -> &BlurScaleSet {
        &self.scales
    }

    pub fn kernel(&self, index: Option<usize>) -> &DiskKernel {
        match index {
            Some(i) => &self.kernels[i],
            None => &self.identity,
        }
    }

    pub fn kernels(&self) -> &[DiskKernel] {
        &self.kernels
    }
}

/// Per-pixel disk radius over an `H x W` grid.
///
/// Radii are held at single precision, the precision of the on-disk format,
/// so that files round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurField {
    height: usize,
    width: usize,
    radii: Vec<f32>,
}

impl BlurField {
    pub fn new(height: usize, width: usize, radii: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "blur field dimensions must be positive, got {height}x{width}"
            )));
        }
        if radii.len() != height * width {
            return Err(Error::shape(
                format!("{} radii", height * width),
                format!("{} radii", radii.len()),
            ));
        }
        if let Some(&r) = radii
            .iter()
            .find(|r| !r.is_finite() || !(0.0..=MAX_RADIUS as f32).contains(*r))
        {
            return Err(Error::RadiusOutOfRange(r as f64));
        }
        Ok(Self {
            height,
            width,
            radii,
        })
    }

    /// Converts double-precision radii, clamping into `[0, 6]`.
    pub fn from_f64_clamped(height: usize, width: usize, radii: &[f64]) -> Result<Self> {
        if radii.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("non-finite radius".into()));
        }
        Self::new(
            height,
            width,
            radii
                .iter()
                .map(|r| r.clamp(0.0, MAX_RADIUS) as f32)
                .collect(),
        )
    }

    pub fn uniform(height: usize, width: usize, radius: f64) -> Result<Self> {
        Self::new(height, width, vec![radius as f32; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn radii(&self) -> &[f32] {
        &self.radii
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.radii[y * self.width + x] as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.radii.iter().map(|&r| r as f64).collect()
    }

    /// Radii divided by [`MAX_RADIUS`], the network's input scaling.
    pub fn normalized(&self) -> Vec<f64> {
        self.radii.iter().map(|&r| r as f64 / MAX_RADIUS).collect()
    }

    pub fn same_shape(&self, other: &BlurField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatternKind {
    LinearRamp,
    Radial,
    StepLayers,
    SmoothLayers,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::LinearRamp => "linear_ramp",
            PatternKind::Radial => "radial",
            PatternKind::StepLayers => "step_layers",
            PatternKind::SmoothLayers => "smooth_layers",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_ramp" => Ok(PatternKind::LinearRamp),
            "radial" => Ok(PatternKind::Radial),
            "step_layers" => Ok(PatternKind::StepLayers),
            "smooth_layers" => Ok(PatternKind::SmoothLayers),
            other => Err(Error::UnsupportedPattern(other.to_string())),
        }
    }
}

/// Direction along which depth layers are stacked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerOrientation {
    /// Horizontal bands stacked top to bottom.
    Horizontal,
    /// Vertical bands stacked left to right.
    Vertical,
    /// Oblique bands stacked along the main diagonal.
    Diagonal,
    /// Oblique bands stacked along the anti-diagonal.
    AntiDiagonal,
}

impl LayerOrientation {
    pub const ALL: [LayerOrientation; 4] = [
        LayerOrientation::Horizontal,
        LayerOrientation::Vertical,
        LayerOrientation::Diagonal,
        LayerOrientation::AntiDiagonal,
    ];

    /// Stacking direction in degrees; y grows downward.
    fn stacking_angle(self) -> f64 {
        match self {
            LayerOrientation::Horizontal => 90.0,
            LayerOrientation::Vertical => 0.0,
            LayerOrientation::Diagonal => 45.0,
            LayerOrientation::AntiDiagonal => 135.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldPattern {
    /// Scale index varies linearly from `start` to `end` along `angle_deg`
    /// (0 = left to right, 90 = top to bottom).
    LinearRamp {
        angle_deg: f64,
        start: usize,
        end: usize,
    },
    /// Scale index grows from `inner` at the center to `outer` at the farthest
    /// corner. `center_offset` shifts the center by fractions of (width, height).
    Radial {
        center_offset: (f64, f64),
        inner: usize,
        outer: usize,
    },
    /// Bands of constant scale, one entry of `layers` per band.
    StepLayers {
        orientation: LayerOrientation,
        layers: Vec<usize>,
    },
    /// Bands whose scale is interpolated linearly between band centers.
    SmoothLayers {
        orientation: LayerOrientation,
        layers: Vec<usize>,
    },
}

impl FieldPattern {
    pub fn kind(&self) -> PatternKind {
        match self {
            FieldPattern::LinearRamp { .. } => PatternKind::LinearRamp,
            FieldPattern::Radial { .. } => PatternKind::Radial,
            FieldPattern::StepLayers { .. } => PatternKind::StepLayers,
            FieldPattern::SmoothLayers { .. } => PatternKind::SmoothLayers,
        }
    }
}

/// A blur-field recipe. The seed drives layer-boundary jitter and waviness.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPatternSpec {
    pub pattern: FieldPattern,
    pub seed: u64,
}

impl FieldPatternSpec {
    pub fn new(pattern: FieldPattern, seed: u64) -> Self {
        Self { pattern, seed }
    }

    pub fn kind(&self) -> PatternKind {
        self.pattern.kind()
    }
}

/// Smallest field side accepted by [`generate_blur_field`].
pub const MIN_FIELD_SIDE: usize = 32;

/// Renders a pattern into a field whose radii all belong to the scale set.
pub fn generate_blur_field(
    spec: &FieldPatternSpec,
    height: usize,
    width: usize,
) -> Result<BlurField> {
    if height < MIN_FIELD_SIDE || width < MIN_FIELD_SIDE {
        return Err(Error::InvalidParameter(format!(
            "blur fields must be at least {MIN_FIELD_SIDE}x{MIN_FIELD_SIDE}, got {height}x{width}"
        )));
    }
    let check = |i: usize| {
        if i < SCALE_COUNT {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "scale index {i} out of range"
            )))
        }
    };
    let set = make_scale_set();
    let mut indices = vec![0usize; height * width];
    match &spec.pattern {
        FieldPattern::LinearRamp {
            angle_deg,
            start,
            end,
        } => {
            check(*start)?;
            check(*end)?;
            let t = projection(height, width, *angle_deg);
            for (idx, t) in indices.iter_mut().zip(&t) {
                *idx = lerp_index(*start, *end, *t);
            }
        }
        FieldPattern::Radial {
            center_offset,
            inner,
            outer,
        } => {
            check(*inner)?;
            check(*outer)?;
            let cx = (width - 1) as f64 * (0.5 + center_offset.0);
            let cy = (height - 1) as f64 * (0.5 + center_offset.1);
            let corners = [
                (0.0, 0.0),
                ((width - 1) as f64, 0.0),
                (0.0, (height - 1) as f64),
                ((width - 1) as f64, (height - 1) as f64),
            ];
            let max_d = corners
                .iter()
                .map(|(x, y)| (x - cx).hypot(y - cy))
                .fold(0.0, f64::max);
            for y in 0..height {
                for x in 0..width {
                    let t = (x as f64 - cx).hypot(y as f64 - cy) / max_d;
                    indices[y * width + x] = lerp_index(*inner, *outer, t.min(1.0));
                }
            }
        }
        FieldPattern::StepLayers {
            orientation,
            layers,
        }
        | FieldPattern::SmoothLayers {
            orientation,
            layers,
        } => {
            if layers.is_empty() {
                return Err(Error::InvalidParameter(
                    "a layered pattern needs at least one layer".into(),
                ));
            }
            for &l in layers {
                check(l)?;
            }
            let smooth = matches!(spec.pattern, FieldPattern::SmoothLayers { .. });
            let bounds = layer_boundaries(layers.len(), spec.seed);
            let t = wavy_projection(height, width, *orientation, spec.seed);
            for (idx, t) in indices.iter_mut().zip(&t) {
                *idx = if smooth {
                    smooth_layer_index(layers, &bounds, *t)
                } else {
                    layers[bounds.iter().filter(|&&b| b <= *t).count()]
                };
            }
        }
    }
    let radii = indices.iter().map(|&i| set.scales[i] as f32).collect();
    BlurField::new(height, width, radii)
}

fn lerp_index(a: usize, b: usize, t: f64) -> usize {
    (a as f64 + (b as f64 - a as f64) * t).round() as usize
}

/// Normalized coordinate in `[0, 1]` of every pixel along `angle_deg`.
fn projection(height: usize, width: usize, angle_deg: f64) -> Vec<f64> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let proj = |y: f64, x: f64| x * c + y * s;
    let (h1, w1) = ((height - 1) as f64, (width - 1) as f64);
    let corners = [proj(0.0, 0.0), proj(0.0, w1), proj(h1, 0.0), proj(h1, w1)];
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            out.push(((proj(y as f64, x as f64) - lo) / (hi - lo)).clamp(0.0, 1.0));
        }
    }
    out
}

const WAVE_AMPLITUDE: f64 = 0.04;

/// Stacking coordinate perturbed by a seeded low-frequency wave along the
/// band direction, so layer borders are not perfectly straight.
fn wavy_projection(
    height: usize,
    width: usize,
    orientation: LayerOrientation,
    seed: u64,
) -> Vec<f64> {
    let angle = orientation.stacking_angle();
    let t = projection(height, width, angle);
    let s = projection(height, width, angle - 90.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let freq = rng.random_range(1..=2) as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    t.iter()
        .zip(&s)
        .map(|(t, s)| t + WAVE_AMPLITUDE * (2.0 * PI * freq * s + phase).sin())
        .collect()
}

/// Interior band boundaries in `(0, 1)`, jittered by less than half a band.
fn layer_boundaries(layers: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 1.0 / layers as f64;
    (1..layers)
        .map(|k| k as f64 * width + rng.random_range(-0.35..0.35) * width)
        .collect()
}

fn smooth_layer_index(layers: &[usize], bounds: &[f64], t: f64) -> usize {
    if layers.len() == 1 {
        return layers[0];
    }
    let mut edges = Vec::with_capacity(bounds.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(bounds);
    edges.push(1.0);
    let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if t <= centers[0] {
        return layers[0];
    }
    if t >= centers[centers.len() - 1] {
        return layers[layers.len() - 1];
    }
    let k = centers
        .windows(2)
        .position(|w| t < w[1])
        .unwrap_or(centers.len() - 2);
    let u = (t - centers[k]) / (centers[k + 1] - centers[k]);
    lerp_index(layers[k], layers[k + 1], u)
}

/// Number of patterns in [`default_pattern_bank`].
pub const BANK_SIZE: usize = 39;
const BANK_SEED: u64 = 0x5eed_b10b;

/// The fixed bank of 39 field recipes:
///
/// | index  | kind          | variants                                   |
/// |--------|---------------|--------------------------------------------|
/// | 0..8   | linear_ramp   | orientations 0°, 45°, ..., 315°            |
/// | 8..11  | radial        | centered, two off-center                   |
/// | 11..27 | step_layers   | 2–5 layers × 4 orientations                |
/// | 27..39 | smooth_layers | 2–4 layers × 4 orientations                |
///
/// Scale indices for every entry are drawn from a ChaCha stream with a fixed
/// seed, so the bank is identical on every platform.
pub fn default_pattern_bank() -> Vec<FieldPatternSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED);
    let mut bank = Vec::with_capacity(BANK_SIZE);
    let seed =
        |bank: &Vec<FieldPatternSpec>| BANK_SEED.wrapping_mul(31).wrapping_add(bank.len() as u64);

    for k in 0..8 {
        let start = rng.random_range(0..=4);
        let end = rng.random_range(16..SCALE_COUNT);
        let s = seed(&bank);
        bank.push(FieldPatternSpec::new(
            FieldPattern::LinearRamp {
                angle_deg: 45.0 * k as f64,
                start,
                end,
            },
            s,
        ));
    }
    for offset in [(0.0, 0.0), (-0.25, -0.2), (0.25, 0.3)] {
        let inner = rng.random_range(0..=3);
        let outer = rng.random_range(15..SCALE_COUNT);
        let s = seed(&bank);
        bank.push(FieldPatternSpec::new(
            FieldPattern::Radial {
                center_offset: offset,
                inner,
                outer,
            },
            s,
        ));
    }
    for smooth in [false, true] {
        let counts = if smooth { 2..=4 } else { 2..=5 };
        for n in counts {
            for orientation in LayerOrientation::ALL {
                let layers: Vec<usize> = sample(&mut rng, SCALE_COUNT, n).into_vec();
                let s = seed(&bank);
                let pattern = if smooth {
                    FieldPattern::SmoothLayers {
                        orientation,
                        layers,
                    }
                } else {
                    FieldPattern::StepLayers {
                        orientation,
                        layers,
                    }
                };
                bank.push(FieldPatternSpec::new(pattern, s));
            }
        }
    }
    debug_assert_eq!(bank.len(), BANK_SIZE);
    bank
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent area-coverage oracle: plain midpoint sampling at `s`
    /// subsamples per side, written directly from the definition.
    fn coverage_oracle(radius: f64, s: usize) -> Vec<f64> {
        let half = radius.ceil() as i64;
        let n = (2 * half + 1) as usize;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut count = 0.0;
                for a in 0..s {
                    for b in 0..s {
                        let y = (i as i64 - half) as f64 - 0.5 + (a as f64 + 0.5) / s as f64;
                        let x = (j as i64 - half) as f64 - 0.5 + (b as f64 + 0.5) / s as f64;
                        if (x * x + y * y).sqrt() <= radius {
                            count += 1.0;
                        }
                    }
                }
                w[i * n + j] = count;
            }
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn scale_set_values() {
        let set = make_scale_set();
        assert_eq!(set.len(), 23);
        assert_eq!(set.scales()[0], 0.5);
        assert_eq!(set.scales()[1] - set.scales()[0], 0.25);
        assert_eq!(set.scales()[22], 6.0);
        for w in set.scales().windows(2) {
            assert_eq!(w[1] - w[0], 0.25);
        }
    }

    #[test]
    fn zero_radius_is_delta() {
        let k = make_disk_kernel(0.0, 16).unwrap();
        assert_eq!(k.support(), 1);
        assert_eq!(k.weights(), &[1.0]);
    }

    #[test]
    fn support_rule() {
        assert_eq!(make_disk_kernel(6.0, 4).unwrap().support(), 13);
        assert_eq!(make_disk_kernel(0.5, 4).unwrap().support(), 3);
        assert_eq!(make_disk_kernel(2.25, 4).unwrap().support(), 7);
    }

    #[test]
    fn negative_radius_is_domain_error() {
        assert!(matches!(
            make_disk_kernel(-0.1, 16),
            Err(Error::RadiusOutOfRange(_))
        ));
        assert!(make_disk_kernel(6.5, 16).is_err());
        assert!(make_disk_kernel(f64::NAN, 16).is_err());
        assert!(make_disk_kernel(1.0, 0).is_err());
    }

    #[test]
    fn supersample_64_matches_oracle() {
        let k = make_disk_kernel(2.0, 64).unwrap();
        assert!(max_diff(k.weights(), &coverage_oracle(2.0, 64)) < 1e-4);
    }

    #[test]
    fn supersample_16_is_close_to_oracle() {
        // Measured against the 64x oracle: 2.77e-4 at radius 2.
        let k = make_disk_kernel(2.0, 16).unwrap();
        let d = max_diff(k.weights(), &coverage_oracle(2.0, 64));
        assert!(d < 3e-4, "deviation {d}");
    }

    #[test]
    fn quantize_examples() {
        let set = make_scale_set();
        assert_eq!(
            set.quantize(0.6),
            Quantized {
                index: Some(0),
                radius: 0.5
            }
        );
        assert_eq!(
            set.quantize(0.625),
            Quantized {
                index: Some(0),
                radius: 0.5
            }
        );
        assert_eq!(
            set.quantize(6.3),
            Quantized {
                index: Some(22),
                radius: 6.0
            }
        );
        assert_eq!(set.quantize(0.2).index, None);
        assert_eq!(set.quantize(0.375).index, None);
        assert_eq!(set.quantize(0.38).index, Some(0));
        assert_eq!(set.quantize(0.7).index, Some(1));
        for (i, &s) in set.scales().iter().enumerate() {
            assert_eq!(
                set.quantize(s),
                Quantized {
                    index: Some(i),
                    radius: s
                }
            );
        }
    }

    #[test]
    fn vertical_ramp() {
        let spec = FieldPatternSpec::new(
            FieldPattern::LinearRamp {
                angle_deg: 90.0,
                start: 0,
                end: 22,
            },
            0,
        );
        let f = generate_blur_field(&spec, 64, 64).unwrap();
        for x in 0..64 {
            assert_eq!(f.get(0, x), 0.5);
            assert_eq!(f.get(63, x), 6.0);
            for y in 1..64 {
                assert!(f.get(y, x) >= f.get(y - 1, x));
            }
        }
    }

    #[test]
    fn single_layer_is_constant() {
        let spec = FieldPatternSpec::new(
            FieldPattern::StepLayers {
                orientation: LayerOrientation::Diagonal,
                layers: vec![4],
            },
            3,
        );
        let f = generate_blur_field(&spec, 40, 48).unwrap();
        assert!(f.radii().iter().all(|&r| r == 1.5));
    }

    #[test]
    fn generation_rejects_bad_specs() {
        let spec = FieldPatternSpec::new(
            FieldPattern::StepLayers {
                orientation: LayerOrientation::Vertical,
                layers: vec![],
            },
            0,
        );
        assert!(generate_blur_field(&spec, 64, 64).is_err());
        let spec = FieldPatternSpec::new(
            FieldPattern::Radial {
                center_offset: (0.0, 0.0),
                inner: 0,
                outer: 23,
            },
            0,
        );
        assert!(generate_blur_field(&spec, 64, 64).is_err());
        assert!(generate_blur_field(&default_pattern_bank()[0], 16, 64).is_err());
        assert!(matches!(
            "spiral".parse::<PatternKind>(),
            Err(Error::UnsupportedPattern(_))
        ));
        assert_eq!(
            "radial".parse::<PatternKind>().unwrap(),
            PatternKind::Radial
        );
    }

    #[test]
    fn bank_composition() {
        let bank = default_pattern_bank();
        assert_eq!(bank.len(), 39);
        let count = |k| bank.iter().filter(|s| s.kind() == k).count();
        assert_eq!(count(PatternKind::LinearRamp), 8);
        assert_eq!(count(PatternKind::Radial), 3);
        assert_eq!(count(PatternKind::StepLayers), 16);
        assert_eq!(count(PatternKind::SmoothLayers), 12);
        for i in 0..bank.len() {
            for j in i + 1..bank.len() {
                assert_ne!(bank[i], bank[j], "specs {i} and {j} coincide");
            }
        }
        assert_eq!(bank, default_pattern_bank());
    }

    #[test]
    fn bank_fields_use_scale_set_and_are_deterministic() {
        let set = make_scale_set();
        for spec in default_pattern_bank() {
            let a = generate_blur_field(&spec, 48, 64).unwrap();
            let b = generate_blur_field(&spec, 48, 64).unwrap();
            assert_eq!(a, b);
            assert!(a.radii().iter().all(|&r| set.contains(r as f64)));
        }
    }

    #[test]
    fn step_layers_are_banded() {
        let spec = FieldPatternSpec::new(
            FieldPattern::StepLayers {
                orientation: LayerOrientation::Horizontal,
                layers: vec![2, 10, 20],
            },
            11,
        );
        let f = generate_blur_field(&spec, 64, 64).unwrap();
        // Every column crosses the layers in stacking order.
        for x in 0..64 {
            let mut seen = vec![f.get(0, x)];
            for y in 1..64 {
                let r = f.get(y, x);
                if r != *seen.last().unwrap() {
                    seen.push(r);
                }
            }
            assert_eq!(seen, vec![1.0, 3.0, 5.5]);
        }
    }
}
