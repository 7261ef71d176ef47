use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate direction: planar constraint needs a nonzero w")]
    DegenerateDirection,

    #[error("bisection did not converge after {iterations} iterations (bracket width {width:e})")]
    NonConvergence { iterations: usize, width: f64 },

    #[error("singular Jacobian: {0}")]
    Singular(String),

    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,

    #[error("non-finite value in {context}{}", at_sample(.sample))]
    NonFinite {
        context: String,
        sample: Option<usize>,
    },

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_sample(sample: &Option<usize>) -> String {
    sample
        .map(|i| format!(" at sample {i}"))
        .unwrap_or_default()
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
