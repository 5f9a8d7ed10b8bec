use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Grid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("mesh contains no triangles")]
    EmptyMesh,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("element {element} references missing node {node}")]
    DanglingNode { element: u64, node: u64 },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("surface is not closed: {boundary_edges} edge(s) not shared by exactly two triangles")]
    OpenSurface { boundary_edges: usize },

    #[error("mesh encloses zero volume")]
    DegenerateVolume,

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: Box<Grid>, right: Box<Grid> },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("connectivity mismatch: {0}")]
    ConnectivityMismatch(String),

    #[error("signal too short: {samples} samples, need at least {required}")]
    SignalTooShort { samples: usize, required: usize },

    #[error("undefined rating: {0}")]
    UndefinedRating(String),

    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}
