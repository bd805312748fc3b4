use thiserror::Error;

use crate::flows::FlowTrajectory;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: wrong dimension, non-finite value, out-of-range parameter.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The kernel or model cannot provide what was asked of it
    /// (derivative order, finite feature map, ...).
    #[error("capability not available: {0}")]
    Capability(String),

    /// A derivative was requested at a point where the kernel is singular.
    #[error("kernel is singular at x = y for derivative order {order}")]
    Singularity { order: usize },

    /// The regularized system could not be factorized even after jitter escalation.
    #[error("factorization failed for a {size}x{size} system (trace {trace:.3e}, max jitter {jitter:.3e})")]
    Factorization { size: usize, trace: f64, jitter: f64 },

    /// Flow kind, kernel and target do not fit together.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A particle left the finite range; carries the trajectory up to the last valid step.
    #[error("flow diverged at step {step} (particle {particle})")]
    Divergence {
        step: usize,
        particle: usize,
        trajectory: Option<Box<FlowTrajectory>>,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
