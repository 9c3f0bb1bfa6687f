use std::path::PathBuf;

use crate::embedstore::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid embedding set at {path}: {}", join_violations(.violations))]
    Format {
        path: PathBuf,
        violations: Vec<Violation>,
    },

    #[error("invalid embedding set: {}", join_violations(.0))]
    Invariant(Vec<Violation>),

    #[error("unknown class id {id} (registry has {n_classes} classes)")]
    UnknownClass { id: usize, n_classes: usize },

    #[error("class registries do not match by name; unmatched: {}", .unmatched.join(", "))]
    RegistryMismatch { unmatched: Vec<String> },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("requested rank {requested} but data only supports rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("zero-norm vector passed to {0}")]
    ZeroNorm(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
