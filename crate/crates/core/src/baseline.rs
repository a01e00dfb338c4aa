//! Classical non-blind deconvolution: Richardson-Lucy per blur scale,
//! composited with feathered scale masks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{box_filter_replicate, correlate_replicate, ImageGrid};
use crate::kernels::{BlurField, DiskKernel, KernelBank};
use crate::synthesis::decompose_field;

pub const DEFAULT_RL_ITERATIONS: usize = 30;

/// Half-width of the box filter that softens scale masks before compositing.
pub const FEATHER_RADIUS: usize = 2;

const TINY: f64 = 1e-12;

fn rl_plane(
    observed: &[f64],
    h: usize,
    w: usize,
    kernel: &DiskKernel,
    iterations: usize,
) -> Vec<f64> {
    let (k, size) = (kernel.weights(), kernel.support());
    let mut u = observed.to_vec();
    for _ in 0..iterations {
        let est = correlate_replicate(&u, h, w, k, size);
        let ratio: Vec<f64> = observed
            .iter()
            .zip(&est)
            .map(|(&d, &e)| if d == 0.0 { 0.0 } else { d / e.max(TINY) })
            .collect();
        // The disk is point-symmetric, so correlation is its own adjoint.
        let back = correlate_replicate(&ratio, h, w, k, size);
        for (ui, bi) in u.iter_mut().zip(&back) {
            *ui *= bi;
        }
    }
    u
}

/// Richardson-Lucy deconvolution of every channel of `image` by `kernel`.
/// The result is clamped to [0, 1] only after the last iteration.
pub fn richardson_lucy(
    image: &ImageGrid,
    kernel: &DiskKernel,
    iterations: usize,
) -> Result<ImageGrid> {
    if iterations == 0 {
        return Err(Error::InvalidParameter(
            "Richardson-Lucy needs at least one iteration".into(),
        ));
    }
    let (h, w) = (image.height(), image.width());
    if h < kernel.support() || w < kernel.support() {
        return Err(Error::InvalidParameter(format!(
            "image {h}x{w} is smaller than the {}-pixel kernel support",
            kernel.support()
        )));
    }
    if image.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter(
            "Richardson-Lucy needs a non-negative image".into(),
        ));
    }
    let planes: Vec<Vec<f64>> = (0..image.channels())
        .into_par_iter()
        .map(|c| rl_plane(image.plane(c), h, w, kernel, iterations))
        .collect();
    let mut out = ImageGrid::from_planar(h, w, image.channels(), planes.concat())?;
    out.clamp_unit();
    Ok(out)
}

/// Per-pixel blending weight of every scale present in `field`, obtained by
/// box filtering the binary scale masks. The weights sum to one everywhere.
pub fn feathered_masks(field: &BlurField, radius: usize) -> Vec<(Option<usize>, Vec<f64>)> {
    let (h, w) = field.shape();
    decompose_field(field)
        .into_iter()
        .map(|m| {
            let binary: Vec<f64> = m.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let soft = if radius == 0 {
                binary
            } else {
                box_filter_replicate(&binary, h, w, radius)
            };
            (m.scale, soft)
        })
        .collect()
}

/// Spatially-varying deconvolution: one Richardson-Lucy run per present
/// scale, blended by feathered masks. Pixels in the identity scale keep the
/// observed value.
pub fn sv_deconvolve_baseline(
    image: &ImageGrid,
    field: &BlurField,
    iterations: usize,
) -> Result<ImageGrid> {
    if (image.height(), image.width()) != field.shape() {
        return Err(Error::shape(
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", field.height(), field.width()),
        ));
    }
    let bank = KernelBank::standard();
    let masks = feathered_masks(field, FEATHER_RADIUS);
    let restored: Vec<ImageGrid> = masks
        .par_iter()
        .map(|(scale, _)| {
            let kernel = bank.kernel(*scale);
            if kernel.is_identity() {
                Ok(image.clone())
            } else {
                richardson_lucy(image, kernel, iterations)
            }
        })
        .collect::<Result<_>>()?;

    let mut out = ImageGrid::new(image.height(), image.width(), image.channels())?;
    for ((_, weight), est) in masks.iter().zip(&restored) {
        for c in 0..image.channels() {
            for ((o, &e), &wt) in out.plane_mut(c).iter_mut().zip(est.plane(c)).zip(weight) {
                *o += wt * e;
            }
        }
    }
    out.clamp_unit();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{
        generate_blur_field, make_disk_kernel, FieldPattern, FieldPatternSpec, LayerOrientation,
    };
    use crate::metrics::psnr;
    use crate::scenes::textured_scene;
    use crate::synthesis::{sv_convolve, NoiseConfig};

    #[test]
    fn delta_kernel_is_identity_after_one_iteration() {
        let img = textured_scene(20, 20, 1);
        let out = richardson_lucy(&img, &DiskKernel::identity(), 1).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageGrid::filled(24, 24, 3, 0.37).unwrap();
        let k = make_disk_kernel(2.5, 16).unwrap();
        let out = richardson_lucy(&img, &k, 10).unwrap();
        for v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn estimates_stay_non_negative() {
        let img = textured_scene(24, 24, 2);
        let k = make_disk_kernel(2.0, 16).unwrap();
        let u = rl_plane(img.plane(0), 24, 24, &k, 15);
        assert!(u.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn uniform_disk_deblur_raises_psnr() {
        let sharp = textured_scene(48, 48, 3);
        let field = BlurField::uniform(48, 48, 2.0).unwrap();
        let blurry = sv_convolve(&sharp, &field, &NoiseConfig::none()).unwrap();
        let k = KernelBank::standard().kernel(KernelBank::standard().scales().quantize(2.0).index);
        let restored = richardson_lucy(&blurry, k, DEFAULT_RL_ITERATIONS).unwrap();
        assert!(psnr(&restored, &sharp).unwrap() > psnr(&blurry, &sharp).unwrap());
    }

    #[test]
    fn uniform_field_matches_single_run() {
        let img = textured_scene(32, 32, 4);
        let field = BlurField::uniform(32, 32, 1.5).unwrap();
        let sv = sv_deconvolve_baseline(&img, &field, 5).unwrap();
        let bank = KernelBank::standard();
        let single =
            richardson_lucy(&img, bank.kernel(bank.scales().quantize(1.5).index), 5).unwrap();
        for (a, b) in sv.data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_is_identity() {
        let img = textured_scene(16, 16, 5);
        let out =
            sv_deconvolve_baseline(&img, &BlurField::uniform(16, 16, 0.0).unwrap(), 3).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn feathered_masks_sum_to_one() {
        let spec = FieldPatternSpec::new(
            FieldPattern::StepLayers {
                orientation: LayerOrientation::Diagonal,
                layers: vec![0, 6, 14],
            },
            2,
        );
        let field = generate_blur_field(&spec, 40, 40).unwrap();
        let masks = feathered_masks(&field, FEATHER_RADIUS);
        assert!(masks.len() >= 2);
        for p in 0..1600 {
            let s: f64 = masks.iter().map(|(_, m)| m[p]).sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn two_layer_case_improves_psnr() {
        let spec = FieldPatternSpec::new(
            FieldPattern::StepLayers {
                orientation: LayerOrientation::Vertical,
                layers: vec![4, 10],
            },
            1,
        );
        let mut gain = 0.0;
        for seed in 0..3 {
            let sharp = textured_scene(48, 48, 20 + seed);
            let field = generate_blur_field(&spec, 48, 48).unwrap();
            let blurry = sv_convolve(&sharp, &field, &NoiseConfig::none()).unwrap();
            let restored = sv_deconvolve_baseline(&blurry, &field, DEFAULT_RL_ITERATIONS).unwrap();
            gain += psnr(&restored, &sharp).unwrap() - psnr(&blurry, &sharp).unwrap();
        }
        assert!(gain / 3.0 > 0.5, "mean gain {}", gain / 3.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = ImageGrid::filled(8, 8, 3, 0.5).unwrap();
        assert!(richardson_lucy(&img, &DiskKernel::identity(), 0).is_err());
        let big = make_disk_kernel(6.0, 4).unwrap();
        assert!(richardson_lucy(&img, &big, 1).is_err());
        assert!(sv_deconvolve_baseline(&img, &BlurField::uniform(8, 9, 1.0).unwrap(), 1).is_err());
    }
}
