//! Data plumbing: shot segmentation, manifests, splits and corpus statistics.

mod manifest;
mod segment;
mod split;
mod stats;

use std::path::PathBuf;

pub use manifest::{
    atomic_write, load_published, read_manifest, write_dataset, write_manifest, MANIFEST_FILE,
    VOCAB_FILE,
};
pub use segment::{load_frames, segment_frames, Segment};
pub use split::{split, SplitSpec};
pub use stats::{stats, CorpusStats};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    InvalidConfig(String),
    #[error("split counts {spec} do not add up to {actual} samples")]
    CountMismatch { spec: usize, actual: usize },
    #[error("chain-annotated samples ({chains}) exceed the training split ({train})")]
    ChainsExceedTrain { chains: usize, train: usize },
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl IngestError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}
