use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular jacobian in {0}")]
    SingularJacobian(&'static str),

    #[error("torque {requested} Nm is not reachable with |i| <= {limit} A")]
    InfeasibleTorque { requested: f64, limit: f64 },

    #[error("voltage limit equation has no positive speed root")]
    NoPositiveRoot,

    #[error("innovation covariance is not invertible (check the measurement noise)")]
    SingularInnovation,

    #[error("qp solver failed: {0}")]
    Qp(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
