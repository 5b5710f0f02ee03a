use std::path::PathBuf;

use sf_diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    Index { face: usize, index: i64, count: usize },

    #[error("face {face} repeats a vertex index")]
    DegenerateFace { face: usize },

    #[error("unsupported mesh format `{0}` (expected .obj or .off)")]
    UnsupportedFormat(String),

    #[error("face {0} has zero area")]
    ZeroAreaFace(usize),

    #[error("mesh has no pair of faces sharing an edge")]
    NoAdjacency,

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("average patch normal vanishes")]
    DegenerateAverageNormal,

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("training set is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Diff(#[from] DiffError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by unreadable or malformed input files, as
    /// opposed to contract violations on well-formed data.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Self::Io { .. }
                | Self::Parse { .. }
                | Self::Index { .. }
                | Self::DegenerateFace { .. }
                | Self::UnsupportedFormat(_)
                | Self::CheckpointFormat(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
