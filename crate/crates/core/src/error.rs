use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FuseError>;

/// Every failure the library can report.
///
/// The variants map onto the process exit codes used by the command line
/// front end: argument, data, geometry and io problems are input errors;
/// numerical, operator and infeasibility problems are numerical errors.
#[derive(Debug, Error)]
pub enum FuseError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("output operator error: {0}")]
    Operator(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("constraints are infeasible: QoI `{qoi}` is linearly dependent on the others in the reduced basis")]
    Infeasible { qoi: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl FuseError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        FuseError::Argument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        FuseError::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FuseError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        FuseError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures caused by the inputs rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FuseError::Argument(_)
                | FuseError::Geometry(_)
                | FuseError::Data(_)
                | FuseError::Io { .. }
                | FuseError::Parse { .. }
        )
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(FuseError::arg(format!("{what} has length {got}, expected {expected}")));
    }
    Ok(())
}
