use thiserror::Error;

use crate::assignment::SolveReport;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong shape for the requested operation.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Linear algebra broke down (non-positive-definite innovation, NaN, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An association history or global hypothesis violates the
    /// one-measurement-per-scan / disjointness rules.
    #[error("invalid association: {0}")]
    InvalidAssociation(String),

    /// Caller mixed incompatible models or modes.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The assignment problem has no feasible solution.
    #[error("infeasible assignment: {0}")]
    Infeasible(String),

    /// The multi-frame solver exhausted its iteration budget without finding
    /// any feasible selection; the partial report is attached.
    #[error("no feasible primal found after {} iterations", report.iterations)]
    NoFeasiblePrimal { report: Box<SolveReport> },

    /// The request exceeds what the exact algorithms in this crate support.
    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
