use thiserror::Error;

/// Errors raised by the curvature, flow and search routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (wrong dimensions, singular metric, bad coefficients).
    #[error("input error: {0}")]
    Input(String),

    /// A linear solve or decomposition could not be carried out reliably.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The ODE integrator could not continue; the last accepted state is retained.
    #[error("integration error at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        last_state: Vec<f64>,
    },

    /// An Einstein search ran out of iterations.
    #[error("search did not converge after {iterations} iterations (best residual {best_residual:e})")]
    Search {
        iterations: usize,
        best_residual: f64,
        best_point: Vec<f64>,
    },

    /// Structural expectation violated (for instance an unstable count that disagrees with nu + q).
    #[error("structural error: {0}")]
    Structural(String),

    /// A file or string could not be decoded.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
