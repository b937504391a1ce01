use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// A field failed validation. `path` names the offending field, e.g. `A[2]` or `noise.SigmaT`.
    #[error("invalid {path}: {message}")]
    Invalid { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank(C) = 0: the output matrix carries no information")]
    ZeroOutputRank,

    #[error("covariance {path} is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { path: String, min_eigenvalue: f64 },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("node {node} is in the public disclosure set")]
    NodeIsPublic { node: usize },

    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("combinatorial guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("ill-conditioned computation: {0}")]
    Conditioning(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("rank conditions disagree: {0}")]
    InconsistentConditions(String),
}

impl Error {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 for input validation, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite
            | Error::Conditioning(_)
            | Error::SingularCovariance(_)
            | Error::InconsistentConditions(_) => 3,
            _ => 2,
        }
    }
}
