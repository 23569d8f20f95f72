//! Files on disk: checkpoints, session recordings, CSV import and run
//! manifests.

pub mod checkpoint;
pub mod csv_import;
pub mod manifest;
pub mod session_io;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{load_agent, load_cnn, save_agent, save_cnn, Block, Checkpoint};
pub use csv_import::{import_csv, CSV_COLUMNS};
pub use manifest::{sha256_file, OutputDigest, RunManifest};
pub use session_io::{read_session, read_sessions_dir, write_session};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("CSV schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("CSV has {0} data rows; expected a positive multiple of 4")]
    RaggedData(usize),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("manifest digest mismatch for {0}")]
    DigestMismatch(String),
}

impl StoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure came from the filesystem rather than the content.
    pub fn is_io(&self) -> bool {
        matches!(self, StoreError::Io { .. })
    }
}
