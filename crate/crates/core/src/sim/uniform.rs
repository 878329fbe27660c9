use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{std_error, SimError};
use crate::ensemble::{rejects, EnsembleConfig, Scheme};
use crate::rng::par_blocks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdUniformSimConfig {
    pub m: usize,
    pub tpr0: f64,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
}

impl IdUniformSimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.m == 0 {
            return Err(SimError::Config("m must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(SimError::Config("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(SimError::Config("no schemes given".into()));
        }
        EnsembleConfig::new(Scheme::Bh, self.tpr0).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Empirical acceptance rate (TPR) of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeRate {
    pub scheme: Scheme,
    pub trials: usize,
    /// Trials declared ID.
    pub accepted: usize,
    pub tpr: f64,
    pub std_error: f64,
}

/// Draws `trials × m` i.i.d. `U[0, 1)` p-values and reports, per scheme, the
/// fraction of trials declared ID.
pub fn simulate_id_uniform(cfg: &IdUniformSimConfig) -> Result<Vec<SchemeRate>, SimError> {
    cfg.validate()?;
    let alpha = EnsembleConfig::bh(cfg.tpr0)
        .map_err(|e| SimError::Config(e.to_string()))?
        .alpha();
    let schemes = &cfg.schemes;
    let per_block = par_blocks(cfg.seed, cfg.trials, |rng, range| {
        let mut accepted = vec![0usize; schemes.len()];
        let mut p = vec![0.0f64; cfg.m];
        for _ in range {
            p.iter_mut().for_each(|x| *x = rng.gen());
            p.sort_unstable_by(f64::total_cmp);
            for (count, &scheme) in accepted.iter_mut().zip(schemes) {
                if !rejects(scheme, &p, alpha) {
                    *count += 1;
                }
            }
        }
        accepted
    });
    Ok(schemes
        .iter()
        .enumerate()
        .map(|(s, &scheme)| {
            let accepted: usize = per_block.iter().map(|b| b[s]).sum();
            let tpr = accepted as f64 / cfg.trials as f64;
            SchemeRate {
                scheme,
                trials: cfg.trials,
                accepted,
                tpr,
                std_error: std_error(tpr, cfg.trials),
            }
        })
        .collect())
}
