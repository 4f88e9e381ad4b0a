//! Error type shared by every module in the crate.
//!
//! The variants mirror the failure classes of the system: bad caller input,
//! synthetic-data generation problems, numerical failures inside the solvers,
//! and plain IO. Solver failures carry enough context (edge, iteration trace)
//! to debug a diverged run from the error alone.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Synthetic sequence generation failed, e.g. the trajectory left the
    /// scene bounds. Names the offending frame.
    #[error("generation error at frame {frame}: {msg}")]
    Generation { frame: usize, msg: String },

    /// A Jacobian or residual evaluated to a non-finite value. Names the
    /// factor-graph edge that produced it.
    #[error("linearization error on edge {edge}: {msg}")]
    Linearization { edge: String, msg: String },

    /// The reduced camera system stayed singular even after damping.
    #[error("solver error: {0}")]
    Solver(String),

    /// The optimizer diverged. Carries the accepted-cost trace so the run can
    /// be inspected post mortem.
    #[error("no convergence after {iterations} iterations: {msg} (cost trace: {cost_trace:?})")]
    Convergence {
        iterations: usize,
        msg: String,
        cost_trace: Vec<f64>,
    },

    /// Map optimization produced a non-finite loss.
    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
