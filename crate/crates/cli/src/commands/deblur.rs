use std::io::Write;

use svbr_core::baseline::sv_deconvolve_baseline;
use svbr_core::dataset::formats::{load_blur_map, read_image, write_image};
use svbr_net::checkpoint::load_checkpoint;
use svbr_net::Mode;

use super::say;
use crate::{CliError, CliResult, DeblurArgs};

pub fn run(args: &DeblurArgs, out: &mut dyn Write) -> CliResult<()> {
    let image = read_image(&args.image)?;
    let field = load_blur_map(&args.blur_map)?;
    if (image.height(), image.width()) != field.shape() {
        return Err(CliError::Input(format!(
            "image is {}x{} but the blur map is {}x{}",
            image.height(),
            image.width(),
            field.height(),
            field.width()
        )));
    }
    let restored = if args.baseline {
        if args.iterations == 0 {
            return Err(CliError::Input("--iterations must be positive".into()));
        }
        sv_deconvolve_baseline(&image, &field, args.iterations)?
    } else {
        let path = args
            .checkpoint
            .as_ref()
            .expect("clap requires a checkpoint without --baseline");
        let (net, _) = load_checkpoint(path)?;
        net.forward(&image, &field, Mode::Eval)?
    };
    write_image(&args.out, &restored)?;
    let engine = if args.baseline {
        "richardson-lucy baseline"
    } else {
        "network"
    };
    say(
        out,
        format!(
            "wrote {}x{} image to {} ({engine})",
            restored.height(),
            restored.width(),
            args.out.display()
        ),
    )
}
