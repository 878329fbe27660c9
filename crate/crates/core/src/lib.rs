//! Out-of-distribution detection with a zoo of pre-trained models.
//!
//! Each model contributes a detection score for a test input. Scores become
//! empirical p-values against in-distribution reference data, and the
//! p-values are combined with the Benjamini–Hochberg step-up rule so that
//! the fraction of ID inputs accepted stays at the target level no matter
//! how many models the zoo holds.
//!
//! The pipeline, module by module:
//!
//! 1. [`ingest`]: feature and logit matrices on disk plus the zoo manifest.
//! 2. [`scores`]: MSP, energy, Mahalanobis and KNN scores per model.
//! 3. [`pvalue`]: empirical p-values and the equivalent hard thresholds.
//! 4. [`ensemble`]: BH and the naive, average and voting baselines.
//! 5. [`metrics`]: TPR, FPR, AUC and benchmark reports.
//! 6. [`sim`]: Monte Carlo checks of the level and power guarantees.
//!
//! ```
//! use zoo_ood::ensemble::{bh_decide, EnsembleConfig};
//! use zoo_ood::Label;
//!
//! // three models; only the second finds the input unusual
//! let decision = bh_decide(&[0.9, 0.001, 0.2], &EnsembleConfig::bh(0.95)?)?;
//! assert_eq!(decision.label, Label::Ood);
//! assert_eq!(decision.contributing_models, vec![1]);
//! # Ok::<(), zoo_ood::ensemble::EnsembleError>(())
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod ensemble;
pub mod fmt_num;
pub mod ingest;
pub mod metrics;
pub mod pvalue;
pub mod rng;
pub mod scores;
pub mod sim;

mod error;

pub use error::Error;

/// Outcome of a detector for one input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Id => "ID",
            Label::Ood => "OOD",
        })
    }
}
