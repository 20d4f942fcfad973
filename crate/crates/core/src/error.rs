use std::io;

use thiserror::Error;

/// Errors raised by the simulator and the estimation layer.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or model hypothesis was violated.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The explicit nonlinear update produced non-finite or unstable values.
    #[error("step rejected at t = {time}: {reason}")]
    StepRejected { time: f64, reason: String },

    /// A trajectory could not be advanced even after repeated step halving.
    #[error("trajectory {trajectory:?} aborted at t = {time} after {halvings} halvings")]
    Aborted {
        trajectory: Option<usize>,
        time: f64,
        halvings: u32,
    },

    /// Not enough data to produce an estimate; no number is fabricated.
    #[error("estimation failure: {0}")]
    Estimation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("report encoding error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 2,
            Error::Estimation(_) => 3,
            Error::StepRejected { .. } | Error::Aborted { .. } => 3,
            Error::Usage(_) => 64,
            Error::Io(_) | Error::Json(_) => 74,
        }
    }

    /// Attaches a trajectory index to an abort raised deep inside a run.
    pub fn with_trajectory(self, index: usize) -> Self {
        match self {
            Error::Aborted { time, halvings, .. } => Error::Aborted {
                trajectory: Some(index),
                time,
                halvings,
            },
            other => other,
        }
    }
}
