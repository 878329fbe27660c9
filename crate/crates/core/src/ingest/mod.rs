//! Reading and writing feature/logit matrices and the model-zoo manifest.

mod manifest;
mod matrix;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use manifest::{
    load_manifest, validate_bundle, BundleSummary, DatasetRole, ManifestDoc, ModelDoc, ModelEntry,
    ModelSummary, ZooManifest,
};
pub use matrix::{
    read_matrix, read_shape, write_matrix, FeatureMatrix, DTYPE_F32_LE, HEADER_LEN, MAGIC,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file does not start with the ZFM1 magic bytes")]
    MagicMismatch,
    #[error("unsupported dtype code {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("{extra} unexpected bytes after the payload")]
    TrailingBytes { extra: usize },
    #[error("matrix dimensions overflow the address space")]
    DimOverflow,
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("data length {len} does not match {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("row has {found} values, expected {expected}")]
    RaggedRows { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("manifest schema: {0}")]
    SchemaError(String),
    #[error("model {model:?} is missing the required {split} split")]
    MissingSplit { model: String, split: String },
    #[error("model {model:?}: {kind} split {split} has {found} columns, expected {expected}")]
    DimMismatch {
        model: String,
        kind: &'static str,
        split: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate model name {0:?}")]
    DuplicateModelName(String),
    #[error("cannot read matrix {path}: {reason}")]
    UnreadableMatrix { path: PathBuf, reason: String },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
