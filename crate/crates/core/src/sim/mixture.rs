use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{std_error, SimError};
use crate::ensemble::bh_reject_count;
use crate::metrics::DetectionCounts;
use crate::rng::par_blocks;

/// One OOD input tested against `m` models, of which `round(pi·m)` are
/// active. Inactive models give `U[0, 1]` p-values; active ones give
/// `Beta(g_shape, 1)` p-values with CDF `u^g_shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSimConfig {
    pub m: usize,
    pub pi: f64,
    pub g_shape: f64,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    /// Keep the per-trial contingency counts in the result.
    #[serde(default)]
    pub keep_counts: bool,
}

impl MixtureSimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.m == 0 || self.trials == 0 {
            return Err(SimError::Config("m and trials must be at least 1".into()));
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(SimError::Config(format!("pi must lie in (0, 1], got {}", self.pi)));
        }
        if !(self.g_shape > 0.0 && self.g_shape.is_finite()) {
            return Err(SimError::Config(format!("g_shape must be positive, got {}", self.g_shape)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Number of active models per trial.
    pub fn active(&self) -> usize {
        ((self.pi * self.m as f64).round() as usize).min(self.m)
    }
}

/// Averages over trials. Nulls are the inactive models, so `V` counts
/// inactive models among the BH rejections and `S` the active ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerStats {
    pub trials: usize,
    pub m0: usize,
    pub m1: usize,
    /// `E[S / m1]` (0 when there are no active models).
    pub mean_tpr_like: f64,
    /// `E[V / max(k, 1)]`.
    pub fdr: f64,
    /// Standard error of `fdr`.
    pub fdr_std_error: f64,
    /// `E[k / m]`.
    pub rejection_fraction: f64,
    /// `P(S ≥ 1)`.
    pub detection_rate: f64,
    pub detection_std_error: f64,
    /// `P(k ≥ 1)`: the input is declared OOD.
    pub ood_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<DetectionCounts>>,
}

#[derive(Default)]
struct Acc {
    s_frac: f64,
    fdp: f64,
    fdp_sq: f64,
    k_frac: f64,
    detected: usize,
    any: usize,
    counts: Vec<DetectionCounts>,
}

pub fn simulate_mixture(cfg: &MixtureSimConfig) -> Result<PowerStats, SimError> {
    cfg.validate()?;
    let m1 = cfg.active();
    let m0 = cfg.m - m1;
    let inv_shape = 1.0 / cfg.g_shape;
    let blocks = par_blocks(cfg.seed, cfg.trials, |rng, range| {
        let mut acc = Acc::default();
        // (p-value, is_active)
        let mut draws: Vec<(f64, bool)> = vec![(0.0, false); cfg.m];
        let mut sorted = vec![0.0; cfg.m];
        for _ in range {
            for (j, d) in draws.iter_mut().enumerate() {
                let u: f64 = rng.gen();
                *d = if j < m1 { (u.powf(inv_shape), true) } else { (u, false) };
            }
            draws.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            sorted.iter_mut().zip(&draws).for_each(|(s, d)| *s = d.0);
            let k = bh_reject_count(&sorted, cfg.alpha);
            let s = draws[..k].iter().filter(|d| d.1).count();
            let v = k - s;
            let fdp = v as f64 / k.max(1) as f64;
            acc.s_frac += if m1 > 0 { s as f64 / m1 as f64 } else { 0.0 };
            acc.fdp += fdp;
            acc.fdp_sq += fdp * fdp;
            acc.k_frac += k as f64 / cfg.m as f64;
            acc.detected += usize::from(s >= 1);
            acc.any += usize::from(k >= 1);
            if cfg.keep_counts {
                acc.counts.push(DetectionCounts {
                    u: m0 - v,
                    v,
                    t: m1 - s,
                    s,
                    m0,
                    m1,
                    k,
                });
            }
        }
        acc
    });

    let n = cfg.trials as f64;
    let mut total = Acc::default();
    for b in blocks {
        total.s_frac += b.s_frac;
        total.fdp += b.fdp;
        total.fdp_sq += b.fdp_sq;
        total.k_frac += b.k_frac;
        total.detected += b.detected;
        total.any += b.any;
        total.counts.extend(b.counts);
    }
    let fdr = total.fdp / n;
    let fdp_var = (total.fdp_sq / n - fdr * fdr).max(0.0);
    let detection_rate = total.detected as f64 / n;
    Ok(PowerStats {
        trials: cfg.trials,
        m0,
        m1,
        mean_tpr_like: total.s_frac / n,
        fdr,
        fdr_std_error: (fdp_var / n).sqrt(),
        rejection_fraction: total.k_frac / n,
        detection_rate,
        detection_std_error: std_error(detection_rate, cfg.trials),
        ood_rate: total.any as f64 / n,
        counts: cfg.keep_counts.then_some(total.counts),
    })
}
