use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    energy_score, fit_mahalanobis, mahalanobis_score, msp_score, to_f64, KnnBank,
    MahalanobisModel, ScoreConfig, ScoreError, ScoreKind,
};
use crate::ingest::{read_matrix, write_matrix, DatasetRole, FeatureMatrix, IngestError, ZooManifest};

/// `n × m` detection scores; column `j` belongs to `model_names[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    n: usize,
    model_names: Vec<String>,
    configs: Vec<ScoreConfig>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    split: Option<String>,
    columns: Vec<SidecarColumn>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarColumn {
    name: String,
    config: ScoreConfig,
}

impl ScoreTable {
    /// Builds a table from per-model columns of equal length.
    pub fn from_columns(
        model_names: Vec<String>,
        configs: Vec<ScoreConfig>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, ScoreError> {
        if model_names.len() != columns.len() || configs.len() != columns.len() {
            return Err(ScoreError::TableMismatch(
                "names, configs and columns differ in length".into(),
            ));
        }
        if columns.is_empty() {
            return Err(ScoreError::TableMismatch("table has no columns".into()));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(ScoreError::TableMismatch("columns differ in length".into()));
        }
        let m = columns.len();
        let mut values = vec![0.0; n * m];
        for (j, col) in columns.iter().enumerate() {
            super::check_finite(col)?;
            for (i, &v) in col.iter().enumerate() {
                values[i * m + j] = v;
            }
        }
        Ok(Self {
            n,
            model_names,
            configs,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.model_names.len()
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn configs(&self) -> &[ScoreConfig] {
        &self.configs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<Self, ScoreError> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.m()) {
            return Err(ScoreError::TableMismatch(format!("no column {bad}")));
        }
        Self::from_columns(
            columns.iter().map(|&j| self.model_names[j].clone()).collect(),
            columns.iter().map(|&j| self.configs[j]).collect(),
            columns.iter().map(|&j| self.column(j)).collect(),
        )
    }

    /// Writes `<stem>.zfm` (scores as `f32`) and `<stem>.json` naming the columns.
    ///
    /// A table with zero rows cannot be stored in the matrix format.
    pub fn save(&self, dir: &Path, stem: &str, split: Option<&DatasetRole>) -> Result<(PathBuf, PathBuf), ScoreError> {
        let matrix = FeatureMatrix::new(
            self.n,
            self.m(),
            self.values.iter().map(|&v| v as f32).collect(),
        )?;
        let zfm = dir.join(format!("{stem}.zfm"));
        let json = dir.join(format!("{stem}.json"));
        write_matrix(&matrix, &zfm)?;
        let sidecar = Sidecar {
            rows: self.n,
            split: split.map(|s| s.to_string()),
            columns: self
                .model_names
                .iter()
                .zip(&self.configs)
                .map(|(name, config)| SidecarColumn {
                    name: name.clone(),
                    config: *config,
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        text.push('\n');
        fs::write(&json, text).map_err(|e| IngestError::io(&json, e))?;
        Ok((zfm, json))
    }

    /// Reads a table written by [`ScoreTable::save`].
    pub fn load(zfm: &Path, json: &Path) -> Result<Self, ScoreError> {
        let matrix = read_matrix(zfm, true)?;
        let text = fs::read(json).map_err(|e| IngestError::io(json, e))?;
        let sidecar: Sidecar = serde_json::from_slice(&text)
            .map_err(|e| IngestError::SchemaError(e.to_string()))?;
        if sidecar.columns.len() != matrix.cols() || sidecar.rows != matrix.rows() {
            return Err(ScoreError::TableMismatch(
                "sidecar does not match the score matrix".into(),
            ));
        }
        let columns = (0..matrix.cols())
            .map(|j| (0..matrix.rows()).map(|i| f64::from(matrix.get(i, j))).collect())
            .collect();
        let (names, configs) = sidecar.columns.into_iter().map(|c| (c.name, c.config)).unzip();
        Self::from_columns(names, configs, columns)
    }
}

/// One zoo member with its matrices held in memory.
#[derive(Debug, Clone)]
pub struct ZooModel {
    pub name: String,
    pub config: ScoreConfig,
    pub features: BTreeMap<DatasetRole, FeatureMatrix>,
    pub logits: BTreeMap<DatasetRole, FeatureMatrix>,
    /// Class labels of `id_train` (Mahalanobis).
    pub train_labels: Option<Vec<usize>>,
}

impl ZooModel {
    pub fn new(name: impl Into<String>, config: ScoreConfig) -> Self {
        Self {
            name: name.into(),
            config,
            features: BTreeMap::new(),
            logits: BTreeMap::new(),
            train_labels: None,
        }
    }

    fn input(&self, split: &DatasetRole) -> Result<&FeatureMatrix, ScoreError> {
        let (source, input) = match self.config.kind {
            ScoreKind::Msp | ScoreKind::Energy => (&self.logits, "logits"),
            ScoreKind::Knn | ScoreKind::Mahalanobis => (&self.features, "features"),
        };
        source.get(split).ok_or_else(|| ScoreError::MissingInput {
            model: self.name.clone(),
            input,
            split: split.to_string(),
        })
    }

    fn labels(&self) -> Result<Vec<usize>, ScoreError> {
        if let Some(labels) = &self.train_labels {
            return Ok(labels.clone());
        }
        let logits = self
            .logits
            .get(&DatasetRole::IdTrain)
            .ok_or_else(|| ScoreError::MissingInput {
                model: self.name.clone(),
                input: "train labels or logits",
                split: DatasetRole::IdTrain.to_string(),
            })?;
        Ok(logits
            .iter_rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0
            })
            .collect())
    }
}

/// An in-memory model zoo. Column order of every table follows `models`.
#[derive(Debug, Clone, Default)]
pub struct ModelZoo {
    pub models: Vec<ZooModel>,
}

impl ModelZoo {
    pub fn new(models: Vec<ZooModel>) -> Self {
        Self { models }
    }

    /// Reads every matrix referenced by the manifest.
    pub fn load(manifest: &ZooManifest) -> Result<Self, ScoreError> {
        let models = manifest
            .models
            .iter()
            .map(|entry| {
                let read_all = |paths: &BTreeMap<DatasetRole, PathBuf>| {
                    paths
                        .iter()
                        .map(|(role, p)| Ok((role.clone(), read_matrix(p, true)?)))
                        .collect::<Result<BTreeMap<_, _>, IngestError>>()
                };
                let train_labels = match &entry.train_labels {
                    Some(p) => Some(read_labels(p)?),
                    None => None,
                };
                Ok(ZooModel {
                    name: entry.name.clone(),
                    config: entry.config,
                    features: read_all(&entry.features)?,
                    logits: read_all(&entry.logits)?,
                    train_labels,
                })
            })
            .collect::<Result<Vec<_>, ScoreError>>()?;
        Ok(Self { models })
    }

    pub fn model_names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }

    /// Fits whatever each model's score needs from `id_train`.
    pub fn fit(&self) -> Result<FittedZoo<'_>, ScoreError> {
        let scorers = self
            .models
            .iter()
            .map(|model| FittedScorer::fit(model))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FittedZoo { zoo: self, scorers })
    }

    /// Number of rows of `split` (taken from the first model).
    pub fn split_len(&self, split: &DatasetRole) -> Option<usize> {
        let model = self.models.first()?;
        model
            .features
            .get(split)
            .or_else(|| model.logits.get(split))
            .map(|m| m.rows())
    }
}

fn read_labels(path: &Path) -> Result<Vec<usize>, ScoreError> {
    let m = read_matrix(path, true)?;
    if m.cols() != 1 {
        return Err(IngestError::SchemaError(format!(
            "{}: labels must be a single column",
            path.display()
        ))
        .into());
    }
    m.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(IngestError::SchemaError(format!("{}: invalid label {v}", path.display())).into())
            }
        })
        .collect()
}

/// A model's score function with any state fitted on `id_train`.
#[derive(Debug, Clone)]
pub enum FittedScorer {
    Msp,
    Energy { temperature: f64 },
    Mahalanobis(MahalanobisModel),
    Knn { bank: KnnBank, k: usize },
}

impl FittedScorer {
    pub fn fit(model: &ZooModel) -> Result<Self, ScoreError> {
        let cfg = model.config;
        cfg.validate()?;
        Ok(match cfg.kind {
            ScoreKind::Msp => FittedScorer::Msp,
            ScoreKind::Energy => FittedScorer::Energy {
                temperature: cfg.temperature,
            },
            ScoreKind::Mahalanobis => {
                let train = model.input(&DatasetRole::IdTrain)?;
                let labels = model.labels()?;
                let classes = labels.iter().copied().max().map_or(0, |c| c + 1);
                FittedScorer::Mahalanobis(fit_mahalanobis(train, &labels, classes, cfg.cov_ridge)?)
            }
            ScoreKind::Knn => {
                let train = model.input(&DatasetRole::IdTrain)?;
                if cfg.k > train.rows() {
                    return Err(ScoreError::KTooLarge {
                        k: cfg.k,
                        bank: train.rows(),
                    });
                }
                FittedScorer::Knn {
                    bank: KnnBank::new(train, cfg.normalize)?,
                    k: cfg.k,
                }
            }
        })
    }

    pub fn score(&self, input: &[f64]) -> Result<f64, ScoreError> {
        match self {
            FittedScorer::Msp => msp_score(input),
            FittedScorer::Energy { temperature } => energy_score(input, *temperature),
            FittedScorer::Mahalanobis(model) => mahalanobis_score(model, input),
            FittedScorer::Knn { bank, k } => bank.score(input, *k),
        }
    }

    pub fn score_rows(&self, rows: &FeatureMatrix) -> Result<Vec<f64>, ScoreError> {
        rows.iter_rows()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|row| self.score(&to_f64(row)))
            .collect()
    }
}

/// A zoo whose models have been fitted and can score any split.
#[derive(Debug)]
pub struct FittedZoo<'a> {
    zoo: &'a ModelZoo,
    scorers: Vec<FittedScorer>,
}

impl FittedZoo<'_> {
    pub fn scorers(&self) -> &[FittedScorer] {
        &self.scorers
    }

    /// Scores every sample of `split` under every model.
    pub fn score_table(&self, split: &DatasetRole) -> Result<ScoreTable, ScoreError> {
        let mut columns = Vec::with_capacity(self.scorers.len());
        for (model, scorer) in self.zoo.models.iter().zip(&self.scorers) {
            columns.push(scorer.score_rows(model.input(split)?)?);
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(ScoreError::TableMismatch(format!(
                "models disagree on the number of {split} samples"
            )));
        }
        ScoreTable::from_columns(
            self.zoo.model_names(),
            self.zoo.models.iter().map(|m| m.config).collect(),
            columns,
        )
    }
}

/// Loads the zoo described by `manifest` and scores `split` under every model.
pub fn score_table(manifest: &ZooManifest, split: &DatasetRole) -> Result<ScoreTable, ScoreError> {
    let zoo = ModelZoo::load(manifest)?;
    zoo.fit()?.score_table(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f32]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_knn_model() {
        let mut model = ZooModel::new("a", ScoreConfig::knn(1, false));
        model.features.insert(DatasetRole::IdTrain, fm(&[&[0.0, 0.0]]));
        model.features.insert(DatasetRole::IdVal, fm(&[&[3.0, 4.0]]));
        let zoo = ModelZoo::new(vec![model]);
        let t = zoo.fit().unwrap().score_table(&DatasetRole::IdVal).unwrap();
        assert_eq!((t.n(), t.m()), (1, 1));
        assert_eq!(t.get(0, 0), -5.0);
    }

    #[test]
    fn msp_and_energy_columns() {
        let logits = fm(&[&[0.0, 0.0]]);
        let mut a = ZooModel::new("msp", ScoreConfig::new(ScoreKind::Msp));
        a.logits.insert(DatasetRole::IdTrain, logits.clone());
        a.logits.insert(DatasetRole::IdVal, logits.clone());
        let mut b = ZooModel::new("energy", ScoreConfig::new(ScoreKind::Energy));
        b.logits = a.logits.clone();
        let zoo = ModelZoo::new(vec![a, b]);
        let t = zoo.fit().unwrap().score_table(&DatasetRole::IdVal).unwrap();
        assert_eq!(t.get(0, 0), 0.5);
        assert!((t.get(0, 1) - 0.693147).abs() < 1e-6);
        assert_eq!(t.model_names(), &["msp".to_string(), "energy".to_string()]);
    }

    #[test]
    fn knn_without_features_is_missing_input() {
        let mut model = ZooModel::new("a", ScoreConfig::knn(1, false));
        model.logits.insert(DatasetRole::IdTrain, fm(&[&[0.0, 1.0]]));
        model.logits.insert(DatasetRole::IdVal, fm(&[&[0.0, 1.0]]));
        let zoo = ModelZoo::new(vec![model]);
        assert!(matches!(zoo.fit(), Err(ScoreError::MissingInput { .. })));
    }

    #[test]
    fn mahalanobis_labels_from_logits() {
        let mut model = ZooModel::new("a", ScoreConfig::new(ScoreKind::Mahalanobis));
        model
            .features
            .insert(DatasetRole::IdTrain, fm(&[&[0.0], &[2.0], &[10.0], &[12.0]]));
        model.features.insert(DatasetRole::IdVal, fm(&[&[1.0], &[6.0]]));
        model.logits.insert(
            DatasetRole::IdTrain,
            fm(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]),
        );
        let zoo = ModelZoo::new(vec![model]);
        let t = zoo.fit().unwrap().score_table(&DatasetRole::IdVal).unwrap();
        // pooled variance 1; means 1 and 11
        assert!(t.get(0, 0).abs() < 1e-5);
        assert!((t.get(1, 0) + 25.0).abs() < 1e-4);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let t = ScoreTable::from_columns(
            vec!["a".into(), "b".into()],
            vec![ScoreConfig::default(); 2],
            vec![vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 8.0]],
        )
        .unwrap();
        let (zfm, json) = t.save(dir.path(), "scores_id_val", Some(&DatasetRole::IdVal)).unwrap();
        assert_eq!(ScoreTable::load(&zfm, &json).unwrap(), t);
        assert_eq!(t.select(&[1]).unwrap().column(0), vec![-0.5, 0.25, 8.0]);
    }
}
