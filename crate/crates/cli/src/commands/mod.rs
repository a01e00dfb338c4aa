pub mod deblur;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;

use std::io::Write;

use crate::{io_err, CliResult};

pub(crate) fn say(out: &mut dyn Write, line: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| io_err("stdout", e))
}
