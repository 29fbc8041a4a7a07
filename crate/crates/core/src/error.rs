use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("missing blob {blob} for track_id {track_id}")]
    MissingBlob { track_id: u64, blob: String },
    #[error("blob length mismatch for track_id {track_id}: expected {expected} bytes, found {found} (byte offset {found})")]
    BlobLength {
        track_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch for track_id {track_id}: expected {expected}, found {found}")]
    Dimension {
        track_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in track_id {track_id} at byte offset {offset}")]
    NonFinite { track_id: u64, offset: usize },
    #[error("duplicate track_id {0}")]
    DuplicateTrack(u64),
    #[error("unknown track_id {0}")]
    UnknownTrack(u64),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },
    #[error("non-finite loss at iteration {iteration}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        iteration: usize,
        epoch: usize,
        batch: usize,
    },
    #[error("covariance is not positive definite; use a positive shrinkage")]
    SingularCovariance,
    #[error("every track was filtered as low quality")]
    AllFiltered,
    #[error("missing truth label for track_id {0}")]
    MissingTruth(u64),
    #[error("loss-metric similarity requires a trained model")]
    MissingModel,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
