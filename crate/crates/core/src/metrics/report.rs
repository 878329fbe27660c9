use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{auc_sweep, confusion, tpr_fpr, MetricsError};
use crate::ensemble::{decide_batch, EnsembleConfig, Scheme};
use crate::fmt_num::sig6;
use crate::ingest::{DatasetRole, IngestError, ZooManifest};
use crate::pvalue::{build_cdfs, pvalues_from_cdfs, PValueMatrix};
use crate::scores::{ModelZoo, ScoreConfig};
use crate::Error;

/// Dataset name of the per-method mean row.
pub const AVERAGE: &str = "Average";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub schemes: Vec<Scheme>,
    pub tpr0: f64,
    /// OOD splits to evaluate; `None` means every OOD split of the zoo.
    pub ood_splits: Option<Vec<DatasetRole>>,
    /// AUC grid step.
    pub step: f64,
    /// Also report each model on its own (as a one-model BH ensemble).
    pub singles: bool,
    pub conformal_smoothing: bool,
    /// Recorded in the report metadata only.
    pub seed: Option<u64>,
}

impl BenchConfig {
    pub fn new(schemes: Vec<Scheme>, tpr0: f64) -> Result<Self, MetricsError> {
        let cfg = Self {
            schemes,
            tpr0,
            ood_splits: None,
            step: 0.0005,
            singles: false,
            conformal_smoothing: false,
            seed: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses scheme names such as `["bh", "naive"]`.
    pub fn parse_schemes<S: AsRef<str>>(names: &[S]) -> Result<Vec<Scheme>, MetricsError> {
        if names.is_empty() {
            return Err(MetricsError::ConfigError("no ensemble schemes given".into()));
        }
        names
            .iter()
            .map(|n| {
                n.as_ref()
                    .parse()
                    .map_err(|_| MetricsError::ConfigError(format!("unknown scheme {:?}", n.as_ref())))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.schemes.is_empty() && !self.singles {
            return Err(MetricsError::ConfigError("nothing to evaluate".into()));
        }
        EnsembleConfig::new(Scheme::Bh, self.tpr0)
            .map_err(|e| MetricsError::ConfigError(e.to_string()))?;
        super::grid_intervals(self.step)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    /// Percentages.
    pub tpr: f64,
    pub fpr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub manifest_digest: Option<String>,
    pub tpr0: f64,
    pub auc_step: f64,
    pub seed: Option<u64>,
    pub models: Vec<String>,
    pub score_configs: Vec<ScoreConfig>,
    pub ood_datasets: Vec<String>,
    /// Free-form configuration echo, e.g. a simulation config.
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

/// Per-(method, dataset) rates in percent, with an [`AVERAGE`] row per method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

impl DetectionReport {
    pub fn row(&self, method: &str, dataset: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.dataset == dataset)
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,tpr,fpr,auc\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.method,
                r.dataset,
                sig6(r.tpr),
                sig6(r.fpr),
                sig6(r.auc)
            );
        }
        out
    }

    /// JSON with metadata; every rate is rounded to six significant digits.
    pub fn to_json(&self) -> String {
        let round = |x: f64| sig6(x).parse::<f64>().unwrap_or(x);
        let rounded = DetectionReport {
            metadata: self.metadata.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| ReportRow {
                    tpr: round(r.tpr),
                    fpr: round(r.fpr),
                    auc: round(r.auc),
                    ..r.clone()
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&rounded).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let header = ["method", "dataset", "TPR", "FPR", "AUC"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| [r.method.clone(), r.dataset.clone(), sig6(r.tpr), sig6(r.fpr), sig6(r.auc)])
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: [&str; 5]| {
            for (i, (c, w)) in row.iter().zip(width).enumerate() {
                if i < 2 {
                    let _ = write!(out, "{c:<w$}  ");
                } else {
                    let _ = write!(out, "{c:>w$}  ");
                }
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        };
        line(&mut out, header);
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3], &row[4]]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IngestError> {
        fs::write(path, self.to_csv()).map_err(|e| IngestError::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<(), IngestError> {
        fs::write(path, self.to_json()).map_err(|e| IngestError::io(path, e))
    }
}

/// Loads the zoo behind `manifest` and benchmarks it.
pub fn bench(manifest: &ZooManifest, config: &BenchConfig) -> Result<DetectionReport, Error> {
    let zoo = ModelZoo::load(manifest)?;
    let mut config = config.clone();
    config.conformal_smoothing |= manifest.conformal_smoothing;
    bench_zoo(&zoo, &config, Some(manifest.digest.clone()))
}

/// Scores `id_val`, `test_id` and every OOD split, converts to p-values
/// against `id_val`, and evaluates each scheme.
pub fn bench_zoo(
    zoo: &ModelZoo,
    config: &BenchConfig,
    manifest_digest: Option<String>,
) -> Result<DetectionReport, Error> {
    config.validate()?;
    let ood_splits = match &config.ood_splits {
        Some(splits) => splits.clone(),
        None => {
            let mut all: Vec<DatasetRole> = zoo
                .models
                .iter()
                .flat_map(|m| m.features.keys().chain(m.logits.keys()))
                .filter(|r| r.is_ood())
                .cloned()
                .collect();
            all.sort();
            all.dedup();
            all
        }
    };
    if ood_splits.is_empty() {
        return Err(MetricsError::ConfigError("no OOD splits to evaluate".into()).into());
    }
    if let Some(bad) = ood_splits.iter().find(|s| !s.is_ood()) {
        return Err(MetricsError::ConfigError(format!("{bad} is not an OOD split")).into());
    }

    let fitted = zoo.fit()?;
    let cdfs = build_cdfs(&fitted.score_table(&DatasetRole::IdVal)?)?;
    let smoothing = config.conformal_smoothing;
    let id_p = pvalues_from_cdfs(&cdfs, &fitted.score_table(&DatasetRole::TestId)?, smoothing)?;
    let ood_p = ood_splits
        .iter()
        .map(|split| Ok(pvalues_from_cdfs(&cdfs, &fitted.score_table(split)?, smoothing)?))
        .collect::<Result<Vec<_>, Error>>()?;

    let names = zoo.model_names();
    let all: Vec<usize> = (0..names.len()).collect();
    let mut methods: Vec<(String, Scheme, Vec<usize>)> = config
        .schemes
        .iter()
        .map(|&s| (s.to_string(), s, all.clone()))
        .collect();
    if config.singles {
        methods.extend(
            names
                .iter()
                .enumerate()
                .map(|(j, n)| (format!("single:{n}"), Scheme::Bh, vec![j])),
        );
    }

    let mut rows = Vec::new();
    for (method, scheme, columns) in methods {
        let ens = EnsembleConfig::new(scheme, config.tpr0)?;
        let id_sel = id_p.select(&columns)?;
        let id_dec = decide_batch(&id_sel, &ens)?;
        let mut dataset_rows = Vec::with_capacity(ood_splits.len());
        for (split, ood) in ood_splits.iter().zip(&ood_p) {
            let ood_sel = ood.select(&columns)?;
            let counts = confusion(&id_dec, &decide_batch(&ood_sel, &ens)?)?;
            let (tpr, fpr) = tpr_fpr(&counts)?;
            let (auc, _) = auc_sweep(&id_sel, &ood_sel, scheme, config.step)?;
            dataset_rows.push(ReportRow {
                method: method.clone(),
                dataset: split.to_string(),
                tpr: 100.0 * tpr,
                fpr: 100.0 * fpr,
                auc: 100.0 * auc,
            });
        }
        let mean = |f: fn(&ReportRow) -> f64| {
            dataset_rows.iter().map(f).sum::<f64>() / dataset_rows.len() as f64
        };
        let average = ReportRow {
            method: method.clone(),
            dataset: AVERAGE.to_string(),
            tpr: mean(|r| r.tpr),
            fpr: mean(|r| r.fpr),
            auc: mean(|r| r.auc),
        };
        rows.extend(dataset_rows);
        rows.push(average);
    }

    Ok(DetectionReport {
        metadata: ReportMetadata {
            manifest_digest,
            tpr0: config.tpr0,
            auc_step: config.step,
            seed: config.seed,
            models: names,
            score_configs: zoo.models.iter().map(|m| m.config).collect(),
            ood_datasets: ood_splits.iter().map(|s| s.to_string()).collect(),
            config: serde_json::Value::Null,
        },
        rows,
    })
}

/// P-value matrices for `test_id` and each OOD split, for callers that want
/// to run their own decisions.
pub fn pvalue_splits(
    zoo: &ModelZoo,
    splits: &[DatasetRole],
    smoothing: bool,
) -> Result<Vec<PValueMatrix>, Error> {
    let fitted = zoo.fit()?;
    let cdfs = build_cdfs(&fitted.score_table(&DatasetRole::IdVal)?)?;
    splits
        .iter()
        .map(|s| Ok(pvalues_from_cdfs(&cdfs, &fitted.score_table(s)?, smoothing)?))
        .collect()
}
