use svbr_core::augmentation::AugmentConfig;
use svbr_core::baseline::sv_deconvolve_baseline;
use svbr_core::dataset::formats::write_image;
use svbr_core::dataset::{ingest, load_dataset, synthesize_dataset, Split, SynthConfig};
use svbr_core::kernels::default_pattern_bank;
use svbr_core::metrics::{mae_blur, psnr};
use svbr_core::scenes::textured_scene;
use svbr_core::synthesis::sv_convolve_naive;

#[test]
fn sources_to_dataset_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    for i in 0..3 {
        // Sources at another size exercise the resize on ingest.
        write_image(
            src.join(format!("scene {i}.png")),
            &textured_scene(40, 48, 30 + i),
        )
        .unwrap();
    }
    std::fs::write(src.join("notes.txt"), "not an image").unwrap();

    let report = ingest(&src, 32, 32).unwrap();
    assert_eq!(report.images.len(), 3);
    assert_eq!(report.images[0].id, "scene_0");
    assert_eq!(report.warnings.len(), 1);

    let cfg = SynthConfig {
        patterns_per_image: 3,
        seed: 11,
        augment: AugmentConfig::default(),
        ..SynthConfig::default()
    };
    let root = dir.path().join("data");
    let outcome = synthesize_dataset(&report.images, &default_pattern_bank(), &cfg, &root).unwrap();
    assert_eq!(outcome.manifest.records.len(), 9);

    let samples = load_dataset(&root).unwrap();
    assert_eq!(samples.len(), 9);
    let train = samples.iter().filter(|s| s.split == Split::Train).count();
    assert_eq!(train, 6, "splits are made per source image");
    let mut maes = Vec::new();
    for s in &samples {
        let reference = sv_convolve_naive(&s.sharp, &s.field_true).unwrap();
        let diff = s
            .blurry
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // Blurry images are stored in single precision.
        assert!(diff <= 1e-6, "{}: {diff}", s.id);
        for estimated in [&s.field_matting, &s.field_dt] {
            let mae = mae_blur(estimated, &s.field_true).unwrap();
            // Estimated maps deviate from the truth, as real estimators do.
            assert!(mae > 0.0, "{}", s.id);
            maes.push(mae);
        }
    }
    let mean = maes.iter().sum::<f64>() / maes.len() as f64;
    assert!(mean < 1.5, "mean mae {mean}");
}

#[test]
fn baseline_restores_synthesized_records() {
    let dir = tempfile::tempdir().unwrap();
    let sources: Vec<_> = (0..2)
        .map(|i| svbr_core::dataset::SourceImage {
            id: format!("s{i}"),
            image: textured_scene(48, 48, 60 + i),
        })
        .collect();
    let cfg = SynthConfig {
        patterns_per_image: 2,
        seed: 5,
        ..SynthConfig::default()
    };
    synthesize_dataset(&sources, &default_pattern_bank(), &cfg, dir.path()).unwrap();
    let mut gain = 0.0;
    let samples = load_dataset(dir.path()).unwrap();
    for s in &samples {
        let restored = sv_deconvolve_baseline(&s.blurry, &s.field_true, 20).unwrap();
        gain += psnr(&restored, &s.sharp).unwrap() - psnr(&s.blurry, &s.sharp).unwrap();
    }
    assert!(gain / samples.len() as f64 > 0.5, "mean gain {gain}");
}
