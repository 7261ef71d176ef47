use std::fmt;

use flowvi_core::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration, dataset or output location.
    Input(String),
    /// Training or evaluation produced a non-finite or unresolvable value.
    Numeric(String),
    /// The gradient audit found a mismatch.
    Gradcheck(Vec<String>),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gradcheck(_) | CliError::Internal(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Input(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric halt: {m}"),
            CliError::Gradcheck(families) => {
                write!(f, "gradient check failed: {}", families.join(", "))
            }
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::NonConvergence { .. } | Error::Singular(_) => {
                CliError::Numeric(e.to_string())
            }
            Error::StaleTape => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
