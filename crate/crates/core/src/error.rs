// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("line {line}: unknown tag `{tag}`")]
    UnknownTag { line: usize, tag: String },

    #[error("unsupported trace format version `{0}`")]
    Version(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid cluster: {0}")]
    Cluster(String),

    #[error("invalid workload: {0}")]
    Workload(String),

    #[error("config: {0}")]
    Config(String),

    #[error("out of free space in allocation group {ag} (requested {requested} sectors)")]
    OutOfSpace { ag: usize, requested: u64 },

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("comparison: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
