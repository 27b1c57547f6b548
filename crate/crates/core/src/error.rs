use thiserror::Error;

pub type Result<T, E = QnboError> = std::result::Result<T, E>;

/// Stage of the outer iteration in which a failure occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    QuasiNewton,
    Direction,
    Hypergradient,
    Baseline,
    Oracle,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Warmup => "warm-up",
            Phase::QuasiNewton => "quasi-newton",
            Phase::Direction => "direction",
            Phase::Hypergradient => "hypergradient",
            Phase::Baseline => "baseline",
            Phase::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum QnboError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pair {index} violates the curvature condition (sᵀg = {curvature:e})")]
    RejectedPair { index: usize, curvature: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("numerical failure during {phase} at iteration {iteration}{}: {detail}", outer_suffix(.outer))]
    NumericalFailure {
        phase: Phase,
        iteration: usize,
        /// Outer step `k`, once the failure has propagated through the driver.
        outer: Option<usize>,
        detail: String,
    },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("unsupported oracle: {0}")]
    Unsupported(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QnboError {
    pub(crate) fn numerical(phase: Phase, iteration: usize, detail: impl Into<String>) -> Self {
        QnboError::NumericalFailure {
            phase,
            iteration,
            outer: None,
            detail: detail.into(),
        }
    }

    /// Re-tags a numerical failure with the outer iteration that produced it.
    pub fn at_outer_iteration(self, k: usize) -> Self {
        match self {
            QnboError::NumericalFailure {
                phase,
                iteration,
                detail,
                ..
            } => QnboError::NumericalFailure {
                phase,
                iteration,
                outer: Some(k),
                detail,
            },
            other => other,
        }
    }
}

fn outer_suffix(outer: &Option<usize>) -> String {
    outer
        .map(|k| format!(" of outer step {k}"))
        .unwrap_or_default()
}
