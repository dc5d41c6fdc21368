use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    /// A quantity that theory guarantees nonnegative came out clearly negative.
    #[error("numerical inconsistency: {what} = {value:e} (tolerance {tolerance:e})")]
    NumericalConsistency {
        what: &'static str,
        value: f64,
        tolerance: f64,
    },

    #[error(
        "input data not exciting: smallest singular value {sigma_min:e} <= {tol:e} x largest {sigma_max:e}"
    )]
    Excitation {
        sigma_min: f64,
        sigma_max: f64,
        tol: f64,
    },

    #[error("synthesis infeasible ({status}): {detail}")]
    Infeasible { status: String, detail: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
