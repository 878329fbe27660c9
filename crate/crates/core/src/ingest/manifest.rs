//! The model-zoo manifest: which models exist, where their matrices live,
//! and how each one is scored.
//!
//! ```json
//! {
//!   "score": "knn",
//!   "k": 50,
//!   "tpr0": 0.95,
//!   "models": [
//!     {
//!       "name": "resnet18",
//!       "features": { "id_train": "r18_train.zfm", "id_val": "r18_val.zfm", "svhn": "r18_svhn.zfm" },
//!       "logits":   { "id_val": "r18_val_logits.zfm" }
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. The order of
//! `models` fixes the column order of every score and p-value matrix.
//!
//! `id_val` is assumed to be drawn from the in-distribution and to be
//! disjoint from `id_train`. That cannot be checked from the files, so it
//! is the caller's contract.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_shape, IngestError};
use crate::scores::{ScoreConfig, ScoreKind};

/// Role a dataset split plays in the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DatasetRole {
    /// In-distribution training data: KNN bank, Mahalanobis fit.
    IdTrain,
    /// In-distribution reference data for the empirical p-values.
    IdVal,
    /// In-distribution test data, used to measure TPR.
    TestId,
    /// A named out-of-distribution test set.
    TestOod(String),
}

impl DatasetRole {
    pub fn name(&self) -> &str {
        match self {
            DatasetRole::IdTrain => "id_train",
            DatasetRole::IdVal => "id_val",
            DatasetRole::TestId => "test_id",
            DatasetRole::TestOod(name) => name,
        }
    }

    pub fn is_ood(&self) -> bool {
        matches!(self, DatasetRole::TestOod(_))
    }
}

impl fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetRole {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let valid = !s.is_empty()
            && s
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !valid {
            return Err(IngestError::SchemaError(format!("invalid split name {s:?}")));
        }
        Ok(match s {
            "id_train" => DatasetRole::IdTrain,
            "id_val" => DatasetRole::IdVal,
            "test_id" => DatasetRole::TestId,
            other => DatasetRole::TestOod(other.to_string()),
        })
    }
}

/// JSON form of a manifest, exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    pub models: Vec<ModelDoc>,
    pub score: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpr0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conformal_smoothing: Option<bool>,
}

/// JSON form of one model entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub features: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub logits: BTreeMap<String, String>,
    /// Class labels of `id_train` as an n×1 matrix (Mahalanobis only).
    /// Without it, the argmax of the `id_train` logits is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_ridge: Option<f64>,
}

impl ModelDoc {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            features: BTreeMap::new(),
            logits: BTreeMap::new(),
            train_labels: None,
            score: None,
            k: None,
            temperature: None,
            normalize: None,
            cov_ridge: None,
        }
    }
}

/// One validated zoo member.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    pub name: String,
    pub features: BTreeMap<DatasetRole, PathBuf>,
    pub logits: BTreeMap<DatasetRole, PathBuf>,
    pub train_labels: Option<PathBuf>,
    /// Effective configuration after applying per-model overrides.
    pub config: ScoreConfig,
    pub feature_dim: Option<usize>,
    pub logit_dim: Option<usize>,
}

impl ModelEntry {
    fn has_split(&self, role: &DatasetRole) -> bool {
        self.features.contains_key(role) || self.logits.contains_key(role)
    }

    /// Whether the inputs required by the configured score kind are present
    /// for `id_train`, `id_val` and every split this model lists.
    pub fn ready(&self) -> bool {
        let splits: BTreeSet<&DatasetRole> =
            self.features.keys().chain(self.logits.keys()).collect();
        let source = match self.config.kind {
            ScoreKind::Msp | ScoreKind::Energy => &self.logits,
            ScoreKind::Knn | ScoreKind::Mahalanobis => &self.features,
        };
        let labelled = match self.config.kind {
            ScoreKind::Mahalanobis => {
                self.train_labels.is_some() || self.logits.contains_key(&DatasetRole::IdTrain)
            }
            _ => true,
        };
        labelled && splits.into_iter().all(|s| source.contains_key(s))
    }
}

/// A loaded and validated model zoo.
#[derive(Debug, Clone, PartialEq)]
pub struct ZooManifest {
    pub models: Vec<ModelEntry>,
    pub score_config: ScoreConfig,
    /// Target TPR level, if the manifest sets one.
    pub tpr0: Option<f64>,
    pub conformal_smoothing: bool,
    /// Every split name referenced by any model.
    pub splits: BTreeSet<DatasetRole>,
    /// SHA-256 of the manifest bytes, hex encoded.
    pub digest: String,
}

impl ZooManifest {
    pub fn model_names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }

    pub fn ood_splits(&self) -> Vec<DatasetRole> {
        self.splits.iter().filter(|s| s.is_ood()).cloned().collect()
    }

    /// Builds a manifest from an in-memory document, resolving relative paths
    /// against `base_dir`.
    pub fn from_doc(doc: ManifestDoc, base_dir: &Path, digest: String) -> Result<Self, IngestError> {
        if doc.models.is_empty() {
            return Err(IngestError::SchemaError("`models` must not be empty".into()));
        }
        let global = ScoreConfig {
            kind: parse_kind(&doc.score)?,
            k: doc.k.unwrap_or(ScoreConfig::DEFAULT_K),
            temperature: doc.temperature.unwrap_or(1.0),
            normalize: doc.normalize.unwrap_or(true),
            cov_ridge: doc.cov_ridge.unwrap_or(ScoreConfig::DEFAULT_RIDGE),
        };
        global
            .validate()
            .map_err(|e| IngestError::SchemaError(e.to_string()))?;
        if let Some(t) = doc.tpr0 {
            if !(t > 0.0 && t < 1.0) {
                return Err(IngestError::SchemaError(format!(
                    "`tpr0` must lie in (0, 1), got {t}"
                )));
            }
        }

        let mut seen = HashSet::new();
        let mut models = Vec::with_capacity(doc.models.len());
        let mut splits = BTreeSet::new();
        for m in doc.models {
            if m.name.is_empty() {
                return Err(IngestError::SchemaError("model name must not be empty".into()));
            }
            if !seen.insert(m.name.clone()) {
                return Err(IngestError::DuplicateModelName(m.name));
            }
            let config = ScoreConfig {
                kind: match &m.score {
                    Some(s) => parse_kind(s)?,
                    None => global.kind,
                },
                k: m.k.unwrap_or(global.k),
                temperature: m.temperature.unwrap_or(global.temperature),
                normalize: m.normalize.unwrap_or(global.normalize),
                cov_ridge: m.cov_ridge.unwrap_or(global.cov_ridge),
            };
            config
                .validate()
                .map_err(|e| IngestError::SchemaError(format!("model {:?}: {e}", m.name)))?;
            let features = resolve_paths(&m.features, base_dir)?;
            let logits = resolve_paths(&m.logits, base_dir)?;
            let mut entry = ModelEntry {
                name: m.name,
                features,
                logits,
                train_labels: m.train_labels.map(|p| base_dir.join(p)),
                config,
                feature_dim: None,
                logit_dim: None,
            };
            for required in [DatasetRole::IdTrain, DatasetRole::IdVal] {
                if !entry.has_split(&required) {
                    return Err(IngestError::MissingSplit {
                        model: entry.name.clone(),
                        split: required.to_string(),
                    });
                }
            }
            entry.feature_dim = common_cols(&entry.name, "features", &entry.features)?;
            entry.logit_dim = common_cols(&entry.name, "logits", &entry.logits)?;
            if let Some(labels) = &entry.train_labels {
                check_readable(labels)?;
            }
            splits.extend(entry.features.keys().cloned());
            splits.extend(entry.logits.keys().cloned());
            models.push(entry);
        }

        Ok(Self {
            models,
            score_config: global,
            tpr0: doc.tpr0,
            conformal_smoothing: doc.conformal_smoothing.unwrap_or(false),
            splits,
            digest,
        })
    }
}

fn parse_kind(s: &str) -> Result<ScoreKind, IngestError> {
    s.parse()
        .map_err(|_| IngestError::SchemaError(format!("unknown score kind {s:?}")))
}

fn resolve_paths(
    raw: &BTreeMap<String, String>,
    base: &Path,
) -> Result<BTreeMap<DatasetRole, PathBuf>, IngestError> {
    raw.iter()
        .map(|(k, v)| Ok((k.parse()?, base.join(v))))
        .collect()
}

fn check_readable(path: &Path) -> Result<(usize, usize), IngestError> {
    read_shape(path).map_err(|e| IngestError::UnreadableMatrix {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn common_cols(
    model: &str,
    kind: &'static str,
    paths: &BTreeMap<DatasetRole, PathBuf>,
) -> Result<Option<usize>, IngestError> {
    // id_train first so mismatches are reported relative to it
    let mut ordered: Vec<_> = paths.iter().collect();
    ordered.sort_by_key(|(role, _)| match role {
        DatasetRole::IdTrain => 0,
        DatasetRole::IdVal => 1,
        _ => 2,
    });
    let mut dim = None;
    for (role, path) in ordered {
        let (_, cols) = check_readable(path)?;
        match dim {
            None => dim = Some(cols),
            Some(d) if d != cols => {
                return Err(IngestError::DimMismatch {
                    model: model.to_string(),
                    kind,
                    split: role.to_string(),
                    expected: d,
                    found: cols,
                })
            }
            Some(_) => {}
        }
    }
    Ok(dim)
}

/// Loads and validates a manifest. Every referenced matrix header is read to
/// check that files exist and that column counts agree across splits.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ZooManifest, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let doc: ManifestDoc =
        serde_json::from_slice(&bytes).map_err(|e| IngestError::SchemaError(e.to_string()))?;
    let digest = hex(&Sha256::digest(&bytes));
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    ZooManifest::from_doc(doc, base, digest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub score: ScoreKind,
    pub n_train: usize,
    pub n_val: usize,
    /// Column count of the matrices the score kind consumes, if present.
    pub dim: Option<usize>,
    pub ready: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleSummary {
    pub m: usize,
    pub models: Vec<ModelSummary>,
}

impl BundleSummary {
    pub fn all_ready(&self) -> bool {
        self.models.iter().all(|m| m.ready)
    }
}

/// Summarizes each model's shapes and whether its score kind can be computed.
///
/// Missing inputs for a score kind are reported through `ready`, not as errors.
pub fn validate_bundle(z: &ZooManifest) -> Result<BundleSummary, IngestError> {
    if z.models.is_empty() {
        return Err(IngestError::SchemaError("`models` must not be empty".into()));
    }
    let rows_of = |entry: &ModelEntry, role: &DatasetRole| -> Result<usize, IngestError> {
        let path = entry
            .features
            .get(role)
            .or_else(|| entry.logits.get(role))
            .ok_or_else(|| IngestError::MissingSplit {
                model: entry.name.clone(),
                split: role.to_string(),
            })?;
        Ok(check_readable(path)?.0)
    };
    let models = z
        .models
        .iter()
        .map(|entry| {
            let dim = match entry.config.kind {
                ScoreKind::Msp | ScoreKind::Energy => entry.logit_dim,
                ScoreKind::Knn | ScoreKind::Mahalanobis => entry.feature_dim,
            };
            Ok(ModelSummary {
                name: entry.name.clone(),
                score: entry.config.kind,
                n_train: rows_of(entry, &DatasetRole::IdTrain)?,
                n_val: rows_of(entry, &DatasetRole::IdVal)?,
                dim,
                ready: entry.ready(),
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    Ok(BundleSummary {
        m: models.len(),
        models,
    })
}
