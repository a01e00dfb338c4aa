use std::process::ExitCode;

use svbr_core::Error as CoreError;
use svbr_net::NetError;
use thiserror::Error;

/// Failures of a subcommand, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// 0 success, 1 verification failure, 2 input error, 3 I/O error,
    /// 4 numerical abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io { .. } => CliError::Io(msg),
            CoreError::Codec {
                source: image::ImageError::IoError(_),
                ..
            } => CliError::Io(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        let msg = e.to_string();
        match e {
            NetError::NonFiniteLoss { .. } => CliError::Numerical(msg),
            NetError::Checkpoint(_) | NetError::Io { .. } => CliError::Io(msg),
            NetError::Core(core) => core.into(),
            _ => CliError::Input(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
