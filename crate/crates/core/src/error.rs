use std::path::PathBuf;

use thiserror::Error;

use crate::optimizer::TripletState;

/// Pipeline stage that produced a registration failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    RotationScale,
    Translation,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::RotationScale => f.write_str("rotation/scale"),
            Stage::Translation => f.write_str("translation"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InputDomain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate energy block (all rows zero)")]
    DegenerateBlock,

    #[error("registration failed at the {stage} stage: {source}")]
    Registration {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("pattern matching failed: {0}")]
    Matching(String),

    #[error("triplet optimizer failed: {reason}")]
    Optimizer {
        reason: String,
        last_state: Box<TripletState>,
    },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scene does not cover the view: {0}")]
    SceneCoverage(String),

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("association failed: {0}")]
    Association(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
