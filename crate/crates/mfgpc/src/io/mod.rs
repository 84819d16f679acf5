//! File formats: datasets, models, ground-truth sidecars and score tables.

mod dataset;
mod model;
mod scores;
mod truth;

pub use dataset::{
    dataset_checksum, load_dataset, parse_dataset, render_dataset, save_dataset, LoadedDataset,
};
pub use model::{
    load_any_model, load_model, load_sf_model, model_document, save_model, save_sf_model, sf_model_document,
    ModelDocument, StoredModel,
};
pub use scores::{load_scores, render_predictions, ScoreTable};
pub use truth::{load_truth, save_truth, truth_document, SpecDoc, TruthDocument};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Model(#[from] mfgpc_core::Error),
}

pub type IoResult<T> = Result<T, IoError>;

pub(crate) fn read_text(path: &std::path::Path) -> IoResult<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &std::path::Path, text: &str) -> IoResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| IoError::File {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
