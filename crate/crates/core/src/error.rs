use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("constraint Jacobian is rank deficient at {point:?}")]
    SingularJacobian { point: Vec<f64> },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("state is off the manifold: residual {residual:e} exceeds tolerance {tolerance:e}")]
    OffManifold { residual: f64, tolerance: f64 },

    #[error("transition covariance is numerically singular at {state:?} (condition {condition:e})")]
    DegenerateTransition { state: Vec<f64>, condition: f64 },

    #[error("could not initialize a state on the manifold at time {time}: {reason}")]
    Initialization { time: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
