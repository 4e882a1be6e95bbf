use thiserror::Error;

use crate::sparse::SolveReport;

pub type Result<T> = std::result::Result<T, PnpError>;

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) lies outside the unit square")]
    OutOfDomain { x: f64, y: f64 },

    #[error("{solver} did not converge: {report:?}")]
    LinearSolve {
        solver: &'static str,
        report: SolveReport,
    },

    #[error("Gummel iteration did not converge after {} iterations (last residual {:e})",
        history.len(), history.last().copied().unwrap_or(f64::NAN))]
    Gummel { history: Vec<f64> },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<PnpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PnpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PnpError::InvalidArgument(msg.into())
    }
}
