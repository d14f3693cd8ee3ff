use emp_core::EmpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] EmpError),

    #[error("usage: {0}")]
    Usage(String),

    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    /// 2 usage, 3 data or validation, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Plot(_) => 3,
            CliError::Core(e) => match e {
                EmpError::Divergence { .. } => 4,
                EmpError::Shape { .. } | EmpError::InvalidMask(_) | EmpError::Contract(_) => 1,
                _ => 3,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
