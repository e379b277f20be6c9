use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of bounds on axis {axis} (extent {extent})")]
    Index {
        axis: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    Shape {
        left: Vec<usize>,
        right: Vec<usize>,
        context: String,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("label {label} outside [0, {classes})")]
    Label { label: usize, classes: usize },

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("ingestion error in {}: {detail} at byte offset {offset}", file.display())]
    Ingestion {
        file: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(left: &[usize], right: &[usize], context: impl Into<String>) -> Self {
        Error::Shape {
            left: left.to_vec(),
            right: right.to_vec(),
            context: context.into(),
        }
    }
}
