//! Emulated blur-map estimates: true radii are kept only on image edges and
//! then densified again, either through the matting Laplacian or through
//! domain-transform filtering. Networks trained on these maps learn to cope
//! with the smearing and leakage of real estimators.

pub mod domain_transform;
pub mod edges;
pub mod matting;
pub mod sparse;

pub use domain_transform::{domain_transform, propagate_dt, DomainTransform, DtConfig};
pub use edges::{detect_edges, EdgeConfig, EdgeMask};
pub use matting::{matting_laplacian, propagate_matting, MattingConfig, MattingOutcome};
pub use sparse::{conjugate_residual, CsrMatrix, SolveReport};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::kernels::{BlurField, MAX_RADIUS};

/// Blur radii known only on a subset of pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseBlurMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl SparseBlurMap {
    /// Values at unknown pixels are ignored and stored as zero.
    pub fn new(height: usize, width: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        if mask.len() != height * width {
            return Err(Error::shape(height * width, mask.len()));
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            } else if !(0.0..=MAX_RADIUS).contains(v) {
                return Err(Error::RadiusOutOfRange(*v));
            }
        }
        Ok(Self {
            height,
            width,
            values,
            mask,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn known_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, y: usize, x: usize) -> Option<f64> {
        let p = y * self.width + x;
        self.mask[p].then(|| self.values[p])
    }
}

/// Keeps the radii of `field` where `edges` is set.
/// False for NaN as well as for non-positive values.
pub(crate) fn positive(v: f64) -> bool {
    v > 0.0
}

pub fn sparsify_at_edges(field: &BlurField, edges: &EdgeMask) -> Result<SparseBlurMap> {
    if field.shape() != (edges.height(), edges.width()) {
        return Err(Error::shape(
            format!("{}x{}", field.height(), field.width()),
            format!("{}x{}", edges.height(), edges.width()),
        ));
    }
    SparseBlurMap::new(
        field.height(),
        field.width(),
        field.to_f64(),
        edges.mask().to_vec(),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentConfig {
    pub edges: EdgeConfig,
    pub matting: MattingConfig,
    pub dt: DtConfig,
}

#[derive(Clone, Debug)]
pub struct AugmentedVariants {
    pub matting: BlurField,
    pub dt: BlurField,
    pub edge_density: f64,
    pub matting_converged: bool,
    pub matting_iterations: usize,
    pub matting_residual: f64,
}

/// Edge detection on `image`, sparsification of `field`, then both
/// propagations guided by `image`.
pub fn make_augmented_variants(
    field: &BlurField,
    image: &ImageGrid,
    cfg: &AugmentConfig,
) -> Result<AugmentedVariants> {
    if field.shape() != (image.height(), image.width()) {
        return Err(Error::shape(
            format!("{}x{}", field.height(), field.width()),
            format!("{}x{}", image.height(), image.width()),
        ));
    }
    let edges = detect_edges(image, cfg.edges.low, cfg.edges.high)?;
    augment_with_edges(field, image, &edges, cfg)
}

/// Like [`make_augmented_variants`] with a precomputed edge mask.
pub fn augment_with_edges(
    field: &BlurField,
    image: &ImageGrid,
    edges: &EdgeMask,
    cfg: &AugmentConfig,
) -> Result<AugmentedVariants> {
    let sparse = sparsify_at_edges(field, edges)?;
    let matting = propagate_matting(&sparse, image, &cfg.matting)?;
    let dt = propagate_dt(&sparse, image, &cfg.dt)?;
    Ok(AugmentedVariants {
        matting: matting.field,
        dt,
        edge_density: edges.density(),
        matting_converged: matting.converged,
        matting_iterations: matting.iterations,
        matting_residual: matting.relative_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{generate_blur_field, FieldPattern, FieldPatternSpec};
    use crate::metrics::mae_blur;
    use crate::scenes::textured_scene;

    #[test]
    fn sparsify_full_and_empty_masks() {
        let field = BlurField::from_f64_clamped(
            4,
            5,
            &(0..20).map(|i| i as f64 * 0.25).collect::<Vec<_>>(),
        )
        .unwrap();
        let all = EdgeMask::new(4, 5, vec![true; 20]).unwrap();
        let dense = sparsify_at_edges(&field, &all).unwrap();
        assert_eq!(dense.values(), field.to_f64().as_slice());
        let none = EdgeMask::new(4, 5, vec![false; 20]).unwrap();
        let empty = sparsify_at_edges(&field, &none).unwrap();
        assert_eq!(empty.known_count(), 0);
        let img = ImageGrid::filled(4, 5, 3, 0.5).unwrap();
        assert!(matches!(
            propagate_dt(&empty, &img, &DtConfig::default()),
            Err(Error::NoConstraints)
        ));
        assert!(matches!(
            propagate_matting(&empty, &img, &MattingConfig::default()),
            Err(Error::NoConstraints)
        ));
    }

    #[test]
    fn sparsify_checkerboard() {
        let field = BlurField::from_f64_clamped(
            6,
            6,
            &(0..36).map(|i| (i % 7) as f64 * 0.5).collect::<Vec<_>>(),
        )
        .unwrap();
        let mask: Vec<bool> = (0..36).map(|p| (p / 6 + p % 6) % 2 == 0).collect();
        let sparse =
            sparsify_at_edges(&field, &EdgeMask::new(6, 6, mask.clone()).unwrap()).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                if mask[y * 6 + x] {
                    assert_eq!(sparse.get(y, x), Some(field.get(y, x)));
                } else {
                    assert_eq!(sparse.get(y, x), None);
                }
            }
        }
    }

    #[test]
    fn sparsify_rejects_shape_mismatch() {
        let field = BlurField::uniform(4, 4, 1.0).unwrap();
        let edges = EdgeMask::new(4, 5, vec![true; 20]).unwrap();
        assert!(sparsify_at_edges(&field, &edges).is_err());
    }

    #[test]
    fn constant_field_gives_constant_variants() {
        let image = textured_scene(48, 48, 3);
        let field = BlurField::uniform(48, 48, 2.25).unwrap();
        let v = make_augmented_variants(&field, &image, &AugmentConfig::default()).unwrap();
        for r in v.matting.to_f64().iter().chain(v.dt.to_f64().iter()) {
            assert!((r - 2.25).abs() < 1e-4, "{r}");
        }
    }

    #[test]
    fn ramp_variants_deviate_moderately_and_differ() {
        let image = textured_scene(48, 48, 11);
        let spec = FieldPatternSpec::new(
            FieldPattern::LinearRamp {
                angle_deg: 0.0,
                start: 0,
                end: 18,
            },
            3,
        );
        let field = generate_blur_field(&spec, 48, 48).unwrap();
        let v = make_augmented_variants(&field, &image, &AugmentConfig::default()).unwrap();
        let m = mae_blur(&v.matting, &field).unwrap();
        let d = mae_blur(&v.dt, &field).unwrap();
        assert!(m > 0.0 && m < 1.5, "matting MAE {m}");
        assert!(d > 0.0 && d < 1.5, "dt MAE {d}");
        assert!(mae_blur(&v.matting, &v.dt).unwrap() > 0.0);
        assert!(v.edge_density > 0.0);
    }
}
