use alloc::boxed::Box;
use alloc::string::String;

use crate::odesolve::SolveStats;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("solver exceeded {max_steps} steps at t = {t} ({} accepted, {} rejected)", stats.accepted_steps, stats.rejected_steps)]
    StepLimit {
        max_steps: usize,
        t: f64,
        stats: SolveStats,
    },

    #[error("solver diverged: non-finite state at t = {t}")]
    Divergence { t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("{0}: metric undefined (needs both positive and negative labels)")]
    UndefinedMetric(&'static str),

    #[error("unknown class index {index} (model has {n_classes} classes)")]
    UnknownClass { index: usize, n_classes: usize },

    #[error("training failed at epoch {epoch}: non-finite loss")]
    TrainingFailure { epoch: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn check_dims(op: &'static str, left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { op, left, right })
    }
}
