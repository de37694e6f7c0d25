use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", summarize(.0))]
    Validation(Vec<Violation>),

    #[error("no convergence after {sweeps} sweeps (last residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("no transitions: every state is terminal")]
    NoTransitions,

    #[error("episode finished: state {0} is terminal")]
    EpisodeFinished(usize),

    #[error("state {0} has no allowed actions")]
    EmptyAllowedSet(usize),

    #[error("linear initialization requires nonnegative coefficients (got {0})")]
    NegativeCoefficient(f64),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any [`Error::Context`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

fn summarize(violations: &[Violation]) -> String {
    match violations {
        [] => "no violations".to_string(),
        [only] => only.to_string(),
        [first, rest @ ..] => format!("{first} (and {} more)", rest.len()),
    }
}
