//! Per-model detection scores, oriented so that higher means more
//! in-distribution.
//!
//! | kind          | input    | score                                        |
//! |---------------|----------|----------------------------------------------|
//! | `msp`         | logits   | max softmax probability                      |
//! | `energy`      | logits   | `T·logsumexp(logits/T)` (negated energy)     |
//! | `mahalanobis` | features | `−min_c (z−μ_c)ᵀ Σ⁻¹ (z−μ_c)`                |
//! | `knn`         | features | `−‖z − z_(k)‖`, distance to k-th neighbour   |

mod knn;
mod logit;
mod mahalanobis;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::IngestError;

pub use knn::{knn_score, KnnBank};
pub use logit::{energy_score, msp_score};
pub use mahalanobis::{fit_mahalanobis, mahalanobis_score, MahalanobisModel};
pub use table::{score_table, FittedScorer, FittedZoo, ModelZoo, ScoreTable, ZooModel};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("input vector is empty")]
    EmptyVector,
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds the bank size {bank}")]
    KTooLarge { k: usize, bank: usize },
    #[error("cannot L2-normalize a zero vector (bank row {0:?})")]
    ZeroNormVector(Option<usize>),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label count {labels} does not match {rows} feature rows")]
    LabelCountMismatch { labels: usize, rows: usize },
    #[error("shared covariance is not positive definite")]
    SingularCovariance,
    #[error("model {model:?} has no {input} for split {split}")]
    MissingInput {
        model: String,
        input: &'static str,
        split: String,
    },
    #[error("invalid score configuration: {0}")]
    InvalidConfig(String),
    #[error("score tables disagree: {0}")]
    TableMismatch(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Msp,
    Energy,
    Mahalanobis,
    Knn,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::Energy => "energy",
            ScoreKind::Mahalanobis => "mahalanobis",
            ScoreKind::Knn => "knn",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(ScoreKind::Msp),
            "energy" => Ok(ScoreKind::Energy),
            "mahalanobis" => Ok(ScoreKind::Mahalanobis),
            "knn" => Ok(ScoreKind::Knn),
            other => Err(ScoreError::InvalidConfig(format!("unknown score kind {other:?}"))),
        }
    }
}

/// How one model's column of a [`ScoreTable`] is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    /// Neighbour rank for KNN.
    pub k: usize,
    /// Energy temperature.
    pub temperature: f64,
    /// L2-normalize KNN features.
    pub normalize: bool,
    /// Ridge added to the Mahalanobis shared covariance.
    pub cov_ridge: f64,
}

impl ScoreConfig {
    pub const DEFAULT_K: usize = 50;
    pub const DEFAULT_RIDGE: f64 = 1e-6;

    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            k: Self::DEFAULT_K,
            temperature: 1.0,
            normalize: true,
            cov_ridge: Self::DEFAULT_RIDGE,
        }
    }

    pub fn knn(k: usize, normalize: bool) -> Self {
        Self {
            k,
            normalize,
            ..Self::new(ScoreKind::Knn)
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.k == 0 {
            return Err(ScoreError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ScoreError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.cov_ridge >= 0.0 && self.cov_ridge.is_finite()) {
            return Err(ScoreError::InvalidConfig(format!(
                "cov_ridge must be nonnegative, got {}",
                self.cov_ridge
            )));
        }
        Ok(())
    }
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self::new(ScoreKind::Knn)
    }
}

pub(crate) fn check_finite(v: &[f64]) -> Result<(), ScoreError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ScoreError::NonFiniteInput)
    }
}

pub(crate) fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}
