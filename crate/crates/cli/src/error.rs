use stopflow::analytic::AnalyticError;
use stopflow::boundary::BoundaryError;
use stopflow::learner::LearnError;
use stopflow::model::{GridError, ParamError};
use stopflow::policy_iteration::PiError;
use stopflow::simulator::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        validation(e)
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        validation(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        validation(e)
    }
}

impl From<BoundaryError> for CliError {
    fn from(e: BoundaryError) -> Self {
        match e {
            BoundaryError::Numeric(_) => numerical(e),
            _ => validation(e),
        }
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::Numeric(_) => numerical(e),
            _ => validation(e),
        }
    }
}

impl From<PiError> for CliError {
    fn from(e: PiError) -> Self {
        match e {
            PiError::NoRoot { .. } | PiError::MultipleRoots { .. } | PiError::Numeric(_) => numerical(e),
            PiError::Analytic(a) => a.into(),
            PiError::Boundary(b) => b.into(),
            _ => validation(e),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Diverged(_) | LearnError::Oracle(_) => numerical(e),
            LearnError::Boundary(b) => b.into(),
            _ => validation(e),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        validation(format!("manifest: {e}"))
    }
}
