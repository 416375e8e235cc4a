use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, MjlsError>;

#[derive(Debug, Clone, PartialEq)]
pub enum NotStabilizableReason {
    /// The trace of some iterate exceeded the divergence bound.
    Diverged { iteration: usize, trace: f64 },
    /// Iteration budget exhausted while the iterates were still moving.
    BudgetExhausted { iterations: usize, increment: f64 },
}

impl std::fmt::Display for NotStabilizableReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Diverged { iteration, trace } => {
                write!(f, "trace {trace:e} exceeded the divergence bound at iteration {iteration}")
            }
            Self::BudgetExhausted { iterations, increment } => write!(
                f,
                "no convergence after {iterations} iterations (last relative increment {increment:e})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MjlsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{}", fmt_breakdown(*.stage, *.mode, *.min_eigenvalue))]
    RiccatiBreakdown {
        stage: Option<usize>,
        mode: usize,
        min_eigenvalue: f64,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("not mean-square stabilizable: {0}")]
    NotStabilizable(NotStabilizableReason),

    #[error(
        "fixed point is only semi-definite in mode {} (min eigenvalue {min_eigenvalue:e}); exact observability likely fails",
        mode + 1
    )]
    ObservabilityViolation { mode: usize, min_eigenvalue: f64 },

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("{}", fmt_diverged(*.trial, *.step))]
    DivergedTrajectory { trial: Option<usize>, step: usize },

    #[error("path enumeration needs {paths} paths, above the cap of {cap}")]
    TooLarge { paths: u128, cap: u128 },
}

fn fmt_breakdown(stage: Option<usize>, mode: usize, min_eigenvalue: f64) -> String {
    match stage {
        Some(k) => format!(
            "Riccati breakdown at stage k={k}, mode {}: Upsilon not positive definite (min eigenvalue {min_eigenvalue:e})",
            mode + 1
        ),
        None => format!(
            "Riccati breakdown in mode {}: Upsilon not positive definite (min eigenvalue {min_eigenvalue:e})",
            mode + 1
        ),
    }
}

fn fmt_diverged(trial: Option<usize>, step: usize) -> String {
    match trial {
        Some(t) => format!("trajectory diverged at step {step} in trial {t}"),
        None => format!("trajectory diverged at step {step}"),
    }
}
