use serde::Serialize;

use crate::ensemble::{bh_decide, EnsembleConfig, EnsembleError};
use crate::Label;

/// Why BH labelled one sample the way it did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub label: Label,
    pub k_reject: usize,
    /// Names of the models behind an OOD decision, smallest p-value first.
    pub contributors: Vec<String>,
    pub contributor_indices: Vec<usize>,
    /// Exactly one model rejected the sample.
    pub solo_detector: bool,
    /// `(model, p-value)` in zoo order.
    pub pvalues: Vec<(String, f64)>,
    /// BH thresholds `(k/m)·α` for `k = 1..=m`.
    pub thresholds: Vec<f64>,
}

impl Attribution {
    /// One-line human summary, e.g. `OOD (k=1, solo): resnet18`.
    pub fn summary(&self) -> String {
        match self.label {
            Label::Id => "ID, no contributors".to_string(),
            Label::Ood => format!(
                "OOD (k={}{}): {}",
                self.k_reject,
                if self.solo_detector { ", solo" } else { "" },
                self.contributors.join(", ")
            ),
        }
    }
}

pub fn explain_sample(
    pvalues: &[f64],
    config: &EnsembleConfig,
    model_names: &[String],
) -> Result<Attribution, EnsembleError> {
    if model_names.len() != pvalues.len() {
        return Err(EnsembleError::NameCountMismatch {
            names: model_names.len(),
            pvalues: pvalues.len(),
        });
    }
    let d = bh_decide(pvalues, config)?;
    let m = pvalues.len();
    let alpha = config.alpha();
    Ok(Attribution {
        label: d.label,
        k_reject: d.k_reject,
        contributors: d
            .contributing_models
            .iter()
            .map(|&j| model_names[j].clone())
            .collect(),
        contributor_indices: d.contributing_models.clone(),
        solo_detector: d.k_reject == 1,
        pvalues: model_names.iter().cloned().zip(pvalues.iter().copied()).collect(),
        thresholds: (1..=m).map(|k| k as f64 * alpha / m as f64).collect(),
    })
}
