use thiserror::Error;

use crate::integrator::MonitorEvent;
use crate::model::State;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid forcing: {0}")]
    InvalidForcing(String),

    #[error("t = {t} is outside the forcing table range [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("equilibria are only defined for constant forcing")]
    UnsupportedForcing,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("singular Jacobian at ({}, {}, {})", .0.x, .0.y, .0.z)]
    SingularJacobian(State),

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: State,
    },

    #[error("integration terminated: {0}")]
    Terminated(MonitorEvent),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown scenario id `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for numerical termination, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Terminated(_) | Error::NoConvergence { .. } | Error::SingularJacobian(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
