use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ensemble::Scheme;
use crate::ingest::{write_matrix, DatasetRole, FeatureMatrix, IngestError, ManifestDoc, ModelDoc};
use crate::metrics::{bench_zoo, BenchConfig, DetectionReport};
use crate::rng::stream;
use crate::scores::{ModelZoo, ScoreConfig, ZooModel};
use crate::Error;

/// An isotropic Gaussian cluster of OOD points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodCluster {
    pub name: String,
    pub mean: Vec<f64>,
    pub scale: f64,
}

/// A synthetic "model": its features are the listed coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModel {
    pub name: String,
    pub axes: Vec<usize>,
}

/// A Gaussian world with one ID cluster and several OOD clusters, seen by
/// models that each observe a subset of the coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBenchConfig {
    pub dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub id_mean: Vec<f64>,
    pub id_scale: f64,
    pub clusters: Vec<OodCluster>,
    pub models: Vec<SynthModel>,
    pub k: usize,
    #[serde(default)]
    pub normalize: bool,
    pub tpr0: f64,
    pub seed: u64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Bh]
}

impl Default for SynthBenchConfig {
    /// Two OOD clusters, each shifted along one axis, and two models that
    /// each see one of those axes: every model is blind to one cluster.
    fn default() -> Self {
        Self {
            dim: 4,
            n_train: 2000,
            n_val: 10_000,
            n_test: 5000,
            id_mean: vec![0.0; 4],
            id_scale: 1.0,
            clusters: vec![
                OodCluster {
                    name: "shift_a".into(),
                    mean: vec![4.0, 0.0, 0.0, 0.0],
                    scale: 1.0,
                },
                OodCluster {
                    name: "shift_b".into(),
                    mean: vec![0.0, 0.0, 4.0, 0.0],
                    scale: 1.0,
                },
            ],
            models: vec![
                SynthModel {
                    name: "view_a".into(),
                    axes: vec![0, 1],
                },
                SynthModel {
                    name: "view_b".into(),
                    axes: vec![2, 3],
                },
            ],
            k: 50,
            normalize: false,
            tpr0: 0.95,
            seed: 0,
            schemes: default_schemes(),
        }
    }
}

impl SynthBenchConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |msg: String| Err(SimError::Config(msg));
        if self.dim == 0 {
            return err("dim must be at least 1".into());
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return err("sample counts must be positive".into());
        }
        if self.k == 0 || self.k > self.n_train {
            return err(format!("k = {} must lie in 1..=n_train", self.k));
        }
        if self.id_mean.len() != self.dim {
            return err("id_mean length differs from dim".into());
        }
        if !(self.id_scale > 0.0) {
            return err("id_scale must be positive".into());
        }
        if self.clusters.is_empty() || self.models.is_empty() {
            return err("need at least one cluster and one model".into());
        }
        if !(self.tpr0 > 0.0 && self.tpr0 < 1.0) {
            return err(format!("tpr0 must lie in (0, 1), got {}", self.tpr0));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return err("duplicate model name".into());
        }
        let mut cluster_names = Vec::new();
        for c in &self.clusters {
            let role: DatasetRole = c
                .name
                .parse()
                .map_err(|e: IngestError| SimError::Config(e.to_string()))?;
            if !role.is_ood() {
                return err(format!("cluster name {:?} is reserved", c.name));
            }
            if cluster_names.contains(&&c.name) {
                return err(format!("duplicate cluster {:?}", c.name));
            }
            cluster_names.push(&c.name);
            if c.mean.len() != self.dim || !(c.scale > 0.0) {
                return err(format!("cluster {:?} has a bad mean or scale", c.name));
            }
        }
        for m in &self.models {
            if m.axes.is_empty() || m.axes.iter().any(|&a| a >= self.dim) {
                return err(format!("model {:?} has an invalid axis set", m.name));
            }
        }
        // every cluster must stand out on some model's coordinates
        for c in &self.clusters {
            let margin = 2.0 * self.id_scale.max(c.scale);
            let visible = self.models.iter().any(|m| {
                m.axes
                    .iter()
                    .any(|&a| (c.mean[a] - self.id_mean[a]).abs() >= margin)
            });
            if !visible {
                return err(format!("cluster {:?} is not separated by any model", c.name));
            }
        }
        Ok(())
    }
}

fn sample(rng: &mut impl Rng, n: usize, mean: &[f64], scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            mean.iter()
                .map(|&mu| mu + scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

fn project(points: &[Vec<f64>], axes: &[usize]) -> FeatureMatrix {
    let data = points
        .iter()
        .flat_map(|p| axes.iter().map(|&a| p[a] as f32))
        .collect();
    FeatureMatrix::new(points.len(), axes.len(), data).expect("non-empty projection")
}

/// Draws the world and returns one in-memory model per configured view.
///
/// Split `s` is drawn from stream `s` of the seed (splits in the order
/// `id_train`, `id_val`, `test_id`, then the clusters).
pub fn generate_zoo(cfg: &SynthBenchConfig) -> Result<ModelZoo, SimError> {
    cfg.validate()?;
    let mut splits: Vec<(DatasetRole, Vec<Vec<f64>>)> = Vec::new();
    let id = [
        (DatasetRole::IdTrain, cfg.n_train),
        (DatasetRole::IdVal, cfg.n_val),
        (DatasetRole::TestId, cfg.n_test),
    ];
    for (s, (role, n)) in id.into_iter().enumerate() {
        let mut rng = stream(cfg.seed, s as u64);
        splits.push((role, sample(&mut rng, n, &cfg.id_mean, cfg.id_scale)));
    }
    for (c, cluster) in cfg.clusters.iter().enumerate() {
        let mut rng = stream(cfg.seed, (3 + c) as u64);
        splits.push((
            DatasetRole::TestOod(cluster.name.clone()),
            sample(&mut rng, cfg.n_test, &cluster.mean, cluster.scale),
        ));
    }
    let models = cfg
        .models
        .iter()
        .map(|view| {
            let mut model = ZooModel::new(view.name.clone(), ScoreConfig::knn(cfg.k, cfg.normalize));
            model.features = splits
                .iter()
                .map(|(role, pts)| (role.clone(), project(pts, &view.axes)))
                .collect::<BTreeMap<_, _>>();
            model
        })
        .collect();
    Ok(ModelZoo::new(models))
}

/// Runs KNN scoring, p-values and every configured scheme on the synthetic
/// world, alongside each model on its own (`single:<name>` rows).
pub fn synth_benchmark(cfg: &SynthBenchConfig) -> Result<DetectionReport, Error> {
    let zoo = generate_zoo(cfg)?;
    let mut bench = BenchConfig::new(cfg.schemes.clone(), cfg.tpr0)?;
    bench.singles = true;
    bench.seed = Some(cfg.seed);
    let mut report = bench_zoo(&zoo, &bench, None)?;
    report.metadata.config = serde_json::to_value(cfg).expect("config serializes");
    Ok(report)
}

/// Writes the synthetic world as `ZFM1` files plus `manifest.json` in `dir`.
pub fn write_bundle(cfg: &SynthBenchConfig, dir: &Path) -> Result<PathBuf, Error> {
    let zoo = generate_zoo(cfg)?;
    fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    let mut docs = Vec::new();
    for model in &zoo.models {
        let mut doc = ModelDoc::new(model.name.clone());
        for (role, matrix) in &model.features {
            let file = format!("{}_{}.zfm", model.name, role);
            write_matrix(matrix, dir.join(&file))?;
            doc.features.insert(role.to_string(), file);
        }
        docs.push(doc);
    }
    let manifest = ManifestDoc {
        models: docs,
        score: "knn".into(),
        k: Some(cfg.k),
        temperature: None,
        normalize: Some(cfg.normalize),
        tpr0: Some(cfg.tpr0),
        cov_ridge: None,
        conformal_smoothing: None,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| IngestError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthBenchConfig {
        SynthBenchConfig {
            n_train: 300,
            n_val: 1000,
            n_test: 500,
            k: 10,
            ..SynthBenchConfig::default()
        }
    }

    #[test]
    fn default_is_valid() {
        SynthBenchConfig::default().validate().unwrap();
    }

    #[test]
    fn invisible_cluster_rejected() {
        let mut cfg = small();
        cfg.clusters[1].mean = vec![0.0, 1.0, 0.0, 0.0];
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn projections_have_configured_width() {
        let zoo = generate_zoo(&small()).unwrap();
        assert_eq!(zoo.models.len(), 2);
        let m = &zoo.models[0].features[&DatasetRole::IdVal];
        assert_eq!((m.rows(), m.cols()), (1000, 2));
        assert_eq!(zoo.models[0].features.len(), 5);
    }

    #[test]
    fn blind_models_and_complementary_ensemble() {
        let report = synth_benchmark(&small()).unwrap();
        let a_on_b = report.row("single:view_a", "shift_b").unwrap().fpr;
        let b_on_a = report.row("single:view_b", "shift_a").unwrap().fpr;
        assert!(a_on_b > 80.0 && b_on_a > 80.0, "{a_on_b} {b_on_a}");
        let ens = report.row("bh", "Average").unwrap().fpr;
        let best = report
            .row("single:view_a", "Average")
            .unwrap()
            .fpr
            .min(report.row("single:view_b", "Average").unwrap().fpr);
        assert!(ens < best);
    }

    #[test]
    fn one_model_matches_single_rows() {
        let mut cfg = small();
        cfg.models.truncate(1);
        cfg.clusters.truncate(1);
        let report = synth_benchmark(&cfg).unwrap();
        for dataset in ["shift_a", "Average"] {
            let bh = report.row("bh", dataset).unwrap();
            let single = report.row("single:view_a", dataset).unwrap();
            assert_eq!((bh.tpr, bh.fpr, bh.auc), (single.tpr, single.fpr, single.auc));
        }
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let path = write_bundle(&cfg, dir.path()).unwrap();
        let manifest = crate::ingest::load_manifest(&path).unwrap();
        assert_eq!(manifest.model_names(), vec!["view_a", "view_b"]);
        let from_disk = crate::metrics::bench(
            &manifest,
            &BenchConfig::new(vec![Scheme::Bh], cfg.tpr0).unwrap(),
        )
        .unwrap();
        let in_memory = synth_benchmark(&cfg).unwrap();
        assert_eq!(from_disk.rows[..3], in_memory.rows[..3]);
    }
}
