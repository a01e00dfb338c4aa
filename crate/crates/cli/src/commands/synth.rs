use std::io::Write;

use svbr_core::dataset::{ingest, sha256_hex, synthesize_dataset, SynthConfig, MANIFEST_NAME};
use svbr_core::kernels::{default_pattern_bank, BANK_SIZE};

use super::say;
use crate::{CliError, CliResult, SynthArgs};

/// Largest network divisor in common use (depth 4).
const DEPTH4_DIVISOR: usize = 16;

pub fn run(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.patterns == 0 || args.patterns > BANK_SIZE {
        return Err(CliError::Input(format!(
            "--patterns must lie in 1..={BANK_SIZE}, got {}",
            args.patterns
        )));
    }
    if !(args.noise_sigma >= 0.0 && args.noise_sigma.is_finite()) {
        return Err(CliError::Input(format!(
            "--noise-sigma must be >= 0, got {}",
            args.noise_sigma
        )));
    }
    if !args.height.is_multiple_of(DEPTH4_DIVISOR) || !args.width.is_multiple_of(DEPTH4_DIVISOR) {
        log::warn!(
            "{}x{} is not divisible by 16; depth-4 networks will reject these samples",
            args.height,
            args.width
        );
        say(
            out,
            format!(
                "warning: {}x{} is not divisible by 16 (needed for depth-4 training)",
                args.height, args.width
            ),
        )?;
    }

    let report = ingest(&args.input_dir, args.height, args.width)?;
    for w in &report.warnings {
        say(out, format!("warning: {w}"))?;
    }
    let cfg = SynthConfig {
        patterns_per_image: args.patterns,
        seed: args.seed,
        noise_sigma: args.noise_sigma,
        split_ratio: args.split_ratio,
        ..SynthConfig::default()
    };
    let outcome = synthesize_dataset(&report.images, &default_pattern_bank(), &cfg, &args.out)?;
    for w in &outcome.warnings {
        say(out, format!("warning: {w}"))?;
    }
    let manifest = outcome.manifest.to_text();
    say(
        out,
        format!("{} records written", outcome.manifest.records.len()),
    )?;
    say(
        out,
        format!(
            "manifest {} sha256={}",
            args.out.join(MANIFEST_NAME).display(),
            sha256_hex(manifest.as_bytes())
        ),
    )
}
