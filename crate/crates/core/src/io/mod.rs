//! Dataset ingestion, persisted artifacts and run configuration.
//!
//! Every persisted artifact carries a format version; readers reject
//! versions they do not know and report positions for malformed input.

mod config;
mod container;
mod delimited;
mod idx;
mod scores;
mod synthetic;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::ihvp::IhvpError;
use crate::model::ModelError;

pub use config::{
    CorruptionSection, DataSection, DatasetSource, ExperimentConfig, LissaSection, RunConfig, SolverConfig,
    DATA_DIR_ENV,
};
pub use container::{
    load_checkpoint, load_ekfac, load_kfac, read_container, save_checkpoint, save_ekfac, save_kfac, write_container,
    Container, NamedArray, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use delimited::{read_delimited, LabelColumn};
pub use idx::{parse_idx_images, parse_idx_labels, read_idx, read_idx_classes, write_idx_images, write_idx_labels, IdxImages};
pub use scores::{read_scores, write_scores, SCORES_VERSION};
pub use synthetic::{gaussian_blobs, generate_synthetic, two_moons, DEFAULT_BLOB_SEPARATION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated {what}, {missing} more bytes expected")]
    Truncated {
        path: PathBuf,
        what: &'static str,
        missing: usize,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { path: PathBuf, found: u64, supported: u64 },
    #[error("unknown synthetic generator `{0}` (expected gaussian_blobs or two_moons_2class)")]
    UnknownGenerator(String),
    #[error("invalid synthetic parameters: {0}")]
    InvalidSynthetic(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ihvp(#[from] IhvpError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}
