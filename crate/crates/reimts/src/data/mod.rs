//! Synthetic corpora, the observation-tuple file format, dataset manifests,
//! and the lookback/horizon windowing that turns raw samples into model
//! inputs.

mod manifest;
mod synthetic;
mod tuples;
mod window;

pub use manifest::{assign_splits, Manifest, NormStats, Split};
pub use synthetic::{generate, Preset, SampleProfile, SeasonalComponent, SyntheticSpec};
pub use tuples::{load_tuples, save_tuples, Corpus};
pub use window::{window_and_normalize, window_sample, Dataset, Example, QUERY_SLOTS};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: no observations")]
    EmptyCorpus { path: PathBuf },
    #[error(transparent)]
    Core(#[from] reimts_core::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| DataError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DataError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}
