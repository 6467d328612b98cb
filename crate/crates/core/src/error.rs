use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("intensity vanishes at event {index} (t = {time})")]
    DegenerateIntensity { index: usize, time: f64 },

    #[error("no convergence after {iterations} iterations in {context} (residual {residual:e})")]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("supercritical triggering kernel: branching ratio {branching_ratio} >= 1")]
    SupercriticalModel { branching_ratio: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn not_pd(context: impl Into<String>) -> Self {
        Error::NotPositiveDefinite {
            context: context.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Prefix the context of a numerical failure, e.g. with the EM iteration.
    pub fn with_context(self, prefix: &str) -> Self {
        match self {
            Error::NotPositiveDefinite { context } => Error::NotPositiveDefinite {
                context: format!("{prefix}: {context}"),
            },
            Error::NoConvergence {
                context,
                iterations,
                residual,
            } => Error::NoConvergence {
                context: format!("{prefix}: {context}"),
                iterations,
                residual,
            },
            other => other,
        }
    }

    /// True for user/input errors as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::SupercriticalModel { .. })
    }
}
