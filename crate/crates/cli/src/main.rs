use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    svbr_cli::configure_threads();
    let mut stdout = std::io::stdout().lock();
    match svbr_cli::run_with(std::env::args_os(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(svbr_cli::CliError::Input(msg))
            if msg.starts_with("error:") || msg.contains("Usage:") =>
        {
            // clap's own message already carries its formatting.
            eprint!("{msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
