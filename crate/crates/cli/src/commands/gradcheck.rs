use std::io::Write;

use svbr_net::gradcheck::{tiny_gradient_check, GradcheckConfig};
use svbr_net::BlockKind;

use super::say;
use crate::{CliError, CliResult, GradcheckArgs};

pub fn parse_block_kind(s: &str) -> Result<BlockKind, String> {
    BlockKind::ALL
        .into_iter()
        .find(|k| k.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown block type `{s}`; expected one of I, II, III, IV, V"))
}

pub fn run(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = GradcheckConfig {
        seed: args.seed,
        corrupt: args.corrupt,
        ..GradcheckConfig::default()
    };
    let report = tiny_gradient_check(&cfg)?;
    write!(out, "{}", report.table()).map_err(|e| crate::io_err("stdout", e))?;
    say(
        out,
        format!(
            "probes {} max relative error {:.3e} (tolerance {:.0e})",
            report.probes.len(),
            report.max_rel_error(),
            report.tolerance
        ),
    )?;
    if report.passed() {
        say(out, "gradient check passed")
    } else {
        let worst = report.worst().expect("a failed check has probes");
        Err(CliError::Verification(format!(
            "gradient check failed: block {} parameter {}[{}] analytic {:.6e} numeric {:.6e} relative error {:.3e}",
            worst.kind, worst.param, worst.index, worst.analytic, worst.numeric, worst.rel_error
        )))
    }
}
