//! Combining per-model p-values into one ID/OOD decision.
//!
//! With `α = 1 − tpr0` and `p_(1) ≤ … ≤ p_(m)` the sorted p-values of one
//! test sample:
//!
//! | scheme    | OOD when                                     |
//! |-----------|----------------------------------------------|
//! | `bh`      | some `k` has `p_(k) ≤ (k/m)·α`               |
//! | `naive`   | `min_j p_j < α`                              |
//! | `average` | `mean_j p_j < α`                             |
//! | `voting`  | more than `m/2` of the `p_j` are `< α`       |
//!
//! Under independent uniform p-values (an ID input, independent models) the
//! `bh` rule rejects with probability exactly `α`, whatever `m` is. The naive
//! rule rejects with probability `1 − (1 − α)^m`.

use std::fmt;
use std::str::FromStr;
use std::sync::Once;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pvalue::{alpha_for, PValueMatrix};
use crate::Label;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("p-value {0} outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("no p-values to combine")]
    EmptyInput,
    #[error("target TPR must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("unknown ensemble scheme {0:?}")]
    UnknownScheme(String),
    #[error("{names} model names for {pvalues} p-values")]
    NameCountMismatch { names: usize, pvalues: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bh,
    Naive,
    Average,
    Voting,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Bh, Scheme::Naive, Scheme::Average, Scheme::Voting];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Bh => "bh",
            Scheme::Naive => "naive",
            Scheme::Average => "average",
            Scheme::Voting => "voting",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bh" => Ok(Scheme::Bh),
            "naive" => Ok(Scheme::Naive),
            "average" => Ok(Scheme::Average),
            "voting" => Ok(Scheme::Voting),
            _ => Err(EnsembleError::UnknownScheme(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub scheme: Scheme,
    /// Target fraction of ID inputs accepted as ID.
    pub tpr0: f64,
}

impl EnsembleConfig {
    pub fn new(scheme: Scheme, tpr0: f64) -> Result<Self, EnsembleError> {
        let cfg = Self { scheme, tpr0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bh(tpr0: f64) -> Result<Self, EnsembleError> {
        Self::new(Scheme::Bh, tpr0)
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(self.tpr0 > 0.0 && self.tpr0 < 1.0) {
            return Err(EnsembleError::InvalidLevel(self.tpr0));
        }
        if self.tpr0 <= 0.5 {
            // once per process: validation runs for every decision
            static WARNED: Once = Once::new();
            WARNED.call_once(|| {
                log::warn!(
                    "tpr0 = {} is not above 0.5; the BH level guarantee assumes it is",
                    self.tpr0
                );
            });
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        alpha_for(self.tpr0)
    }
}

/// Outcome of combining one sample's p-values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub label: Label,
    /// Number of models behind an OOD decision; 0 for ID.
    pub k_reject: usize,
    /// Original indices of those models, in ascending p-value order.
    pub contributing_models: Vec<usize>,
    pub sorted_pvalues: Vec<f64>,
}

impl Decision {
    pub fn is_ood(&self) -> bool {
        self.label == Label::Ood
    }
}

fn check(pvalues: &[f64]) -> Result<(), EnsembleError> {
    if pvalues.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    match pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(&p) => Err(EnsembleError::PValueOutOfRange(p)),
        None => Ok(()),
    }
}

/// Indices sorting `pvalues` ascending, ties by lower index.
fn ascending_order(pvalues: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pvalues.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    order
}

/// Largest `k` with `p_(k) ≤ (k/m)·α`, or 0. `sorted` must be ascending.
pub fn bh_reject_count(sorted: &[f64], alpha: f64) -> usize {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(i, &p)| p <= (*i + 1) as f64 * alpha / m)
        .map_or(0, |(i, _)| i + 1)
}

/// Whether `scheme` rejects (declares OOD) at level `alpha`.
///
/// `sorted` must be ascending. Valid for any `alpha` in `[0, 1]`, including
/// the endpoints used by threshold sweeps, and monotone in `alpha`.
pub fn rejects(scheme: Scheme, sorted: &[f64], alpha: f64) -> bool {
    match scheme {
        Scheme::Bh => bh_reject_count(sorted, alpha) > 0,
        Scheme::Naive => sorted.first().is_some_and(|&p| p < alpha),
        Scheme::Average => sorted.iter().sum::<f64>() / (sorted.len() as f64) < alpha,
        Scheme::Voting => 2 * sorted.partition_point(|&p| p < alpha) > sorted.len(),
    }
}

/// Applies `scheme` at rejection level `alpha ∈ [0, 1]`.
pub fn decide_at_level(pvalues: &[f64], scheme: Scheme, alpha: f64) -> Result<Decision, EnsembleError> {
    check(pvalues)?;
    let order = ascending_order(pvalues);
    let sorted_pvalues: Vec<f64> = order.iter().map(|&j| pvalues[j]).collect();
    let k = match scheme {
        Scheme::Bh => bh_reject_count(&sorted_pvalues, alpha),
        Scheme::Naive => sorted_pvalues.partition_point(|&p| p < alpha),
        Scheme::Average => {
            if rejects(Scheme::Average, &sorted_pvalues, alpha) {
                pvalues.len()
            } else {
                0
            }
        }
        Scheme::Voting => {
            if rejects(Scheme::Voting, &sorted_pvalues, alpha) {
                sorted_pvalues.partition_point(|&p| p < alpha)
            } else {
                0
            }
        }
    };
    Ok(Decision {
        label: if k > 0 { Label::Ood } else { Label::Id },
        k_reject: k,
        contributing_models: order[..k].to_vec(),
        sorted_pvalues,
    })
}

pub fn decide(pvalues: &[f64], config: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    config.validate()?;
    decide_at_level(pvalues, config.scheme, config.alpha())
}

/// Benjamini–Hochberg step-up rule; `k_reject` is the largest passing `k`.
pub fn bh_decide(pvalues: &[f64], config: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    decide(pvalues, &EnsembleConfig { scheme: Scheme::Bh, ..*config })
}

/// OOD if any single model rejects at `α`.
pub fn naive_decide(pvalues: &[f64], config: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    decide(pvalues, &EnsembleConfig { scheme: Scheme::Naive, ..*config })
}

/// OOD if the mean p-value is below `α`. All models are reported as
/// contributing, since the mean cannot be attributed.
pub fn average_decide(pvalues: &[f64], config: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    decide(pvalues, &EnsembleConfig { scheme: Scheme::Average, ..*config })
}

/// OOD on a strict majority of `p_j < α`; contributors are the majority.
pub fn voting_decide(pvalues: &[f64], config: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    decide(pvalues, &EnsembleConfig { scheme: Scheme::Voting, ..*config })
}

/// Row-wise [`decide`].
pub fn decide_batch(pmat: &PValueMatrix, config: &EnsembleConfig) -> Result<Vec<Decision>, EnsembleError> {
    config.validate()?;
    pmat.rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|row| decide(row, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(scheme: Scheme) -> EnsembleConfig {
        EnsembleConfig::new(scheme, 0.95).unwrap()
    }

    #[test]
    fn bh_examples() {
        let c = cfg(Scheme::Bh);
        let d = bh_decide(&[0.04], &c).unwrap();
        assert_eq!((d.label, d.k_reject), (Label::Ood, 1));

        let d = bh_decide(&[1.0, 1.0, 1.0], &c).unwrap();
        assert_eq!((d.label, d.k_reject), (Label::Id, 0));
        assert!(d.contributing_models.is_empty());

        let d = bh_decide(&[0.9, 0.001, 0.2], &c).unwrap();
        assert_eq!((d.label, d.k_reject), (Label::Ood, 1));
        assert_eq!(d.contributing_models, vec![1]);
        assert_eq!(d.sorted_pvalues, vec![0.001, 0.2, 0.9]);

        let d = bh_decide(&[0.03, 0.04, 0.9], &c).unwrap();
        assert_eq!(d.label, Label::Id);

        let d = bh_decide(&[0.01, 0.02, 0.03], &c).unwrap();
        assert_eq!(d.k_reject, 3);
        assert_eq!(d.contributing_models, vec![0, 1, 2]);
    }

    #[test]
    fn step_up_not_step_down() {
        // p_(1) fails its threshold but p_(2) passes: BH still rejects with k = 2
        let d = bh_decide(&[0.02, 0.03], &cfg(Scheme::Bh)).unwrap();
        assert_eq!(d.k_reject, 2);
    }

    #[test]
    fn baseline_examples() {
        let c = cfg(Scheme::Naive);
        assert_eq!(naive_decide(&[0.04, 0.9], &c).unwrap().label, Label::Ood);
        assert_eq!(naive_decide(&[0.06, 0.06], &c).unwrap().label, Label::Id);
        // strict comparison
        assert_eq!(naive_decide(&[0.05], &c).unwrap().label, Label::Id);

        let d = average_decide(&[0.02, 0.02], &c).unwrap();
        assert_eq!((d.label, d.k_reject), (Label::Ood, 2));
        assert_eq!(average_decide(&[0.0, 0.2], &c).unwrap().label, Label::Id);

        let d = voting_decide(&[0.01, 0.02, 0.9], &c).unwrap();
        assert_eq!(d.label, Label::Ood);
        assert_eq!(d.contributing_models, vec![0, 1]);
        assert_eq!(voting_decide(&[0.01, 0.02, 0.9, 0.9], &c).unwrap().label, Label::Id);
    }

    #[test]
    fn errors() {
        let c = cfg(Scheme::Bh);
        assert_eq!(bh_decide(&[], &c), Err(EnsembleError::EmptyInput));
        assert_eq!(bh_decide(&[1.5], &c), Err(EnsembleError::PValueOutOfRange(1.5)));
        assert_eq!(bh_decide(&[f64::NAN], &c).unwrap_err().to_string(), "p-value NaN outside [0, 1]");
        assert!(EnsembleConfig::new(Scheme::Bh, 1.5).is_err());
        assert!("vote".parse::<Scheme>().is_err());
        assert_eq!("BH".parse::<Scheme>().unwrap(), Scheme::Bh);
    }

    #[test]
    fn batch() {
        let p = PValueMatrix::from_rows(&[[0.04], [0.9]]).unwrap();
        let d = decide_batch(&p, &cfg(Scheme::Bh)).unwrap();
        assert_eq!(d.iter().map(|d| d.label).collect::<Vec<_>>(), vec![Label::Ood, Label::Id]);
        assert!(decide_batch(&PValueMatrix::empty(1).unwrap(), &cfg(Scheme::Bh)).unwrap().is_empty());
        let bad = PValueMatrix::from_rows(&[[1.5]]).unwrap();
        assert_eq!(decide_batch(&bad, &cfg(Scheme::Bh)), Err(EnsembleError::PValueOutOfRange(1.5)));
    }

    fn pvec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![0.0f64..=1.0, 0.0f64..0.05], 1..20)
    }

    proptest! {
        #[test]
        fn decreasing_a_pvalue_keeps_ood(p in pvec(), j in any::<prop::sample::Index>(), f in 0.0f64..1.0) {
            let c = cfg(Scheme::Bh);
            let before = bh_decide(&p, &c).unwrap();
            let mut q = p.clone();
            let j = j.index(q.len());
            q[j] *= f;
            let after = bh_decide(&q, &c).unwrap();
            prop_assert!(!before.is_ood() || after.is_ood());
        }

        #[test]
        fn bh_rejects_below_bonferroni(p in pvec()) {
            let c = cfg(Scheme::Bh);
            let min = p.iter().copied().fold(1.0, f64::min);
            if min <= c.alpha() / p.len() as f64 {
                prop_assert!(bh_decide(&p, &c).unwrap().is_ood());
            }
        }

        #[test]
        fn permutation_invariant(p in pvec(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..p.len()).collect();
            perm.shuffle(&mut rng);
            let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            for scheme in Scheme::ALL {
                let c = cfg(scheme);
                let a = decide(&p, &c).unwrap();
                let b = decide(&q, &c).unwrap();
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.k_reject, b.k_reject);
                prop_assert_eq!(&a.sorted_pvalues, &b.sorted_pvalues);
                let mut mapped: Vec<usize> = b.contributing_models.iter().map(|&i| perm[i]).collect();
                let mut orig = a.contributing_models.clone();
                mapped.sort_unstable();
                orig.sort_unstable();
                prop_assert_eq!(mapped, orig);
            }
        }

        #[test]
        fn contributors_reconstructible(p in pvec()) {
            let d = bh_decide(&p, &cfg(Scheme::Bh)).unwrap();
            prop_assert_eq!(d.contributing_models.len(), d.k_reject);
            prop_assert_eq!(d.is_ood(), d.k_reject >= 1);
            prop_assert!(d.sorted_pvalues.windows(2).all(|w| w[0] <= w[1]));
            for (rank, &j) in d.contributing_models.iter().enumerate() {
                prop_assert_eq!(p[j], d.sorted_pvalues[rank]);
            }
            // everything outside the contributor set is at least as large
            if let Some(&last) = d.contributing_models.last() {
                for (j, &pj) in p.iter().enumerate() {
                    if !d.contributing_models.contains(&j) {
                        prop_assert!(pj >= p[last]);
                    }
                }
            }
        }

        #[test]
        fn rejects_is_monotone(p in pvec(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let mut s = p.clone();
            s.sort_by(f64::total_cmp);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for scheme in Scheme::ALL {
                prop_assert!(!rejects(scheme, &s, lo) || rejects(scheme, &s, hi));
            }
        }
    }
}
