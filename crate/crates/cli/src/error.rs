use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] vpp_offer::Error),

    #[error("verification gap {gap:.3e} exceeds tolerance {tol:.1e}")]
    Gap { gap: f64, tol: f64 },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 input error, 3 infeasible model, 4 verification gap.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => core_code(e),
            CliError::Gap { .. } => 4,
        }
    }
}

fn core_code(e: &vpp_offer::Error) -> u8 {
    use vpp_offer::Error::*;
    match e {
        InfeasibleStorage { .. } | Greedy(_) | Lp(_) => 3,
        Scenario { source, .. } => core_code(source),
        _ => 2,
    }
}
