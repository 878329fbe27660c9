//! Monte Carlo checks of the ensemble's guarantees.
//!
//! * [`simulate_id_uniform`]: ID inputs under independent models have i.i.d.
//!   uniform p-values; measures how often each scheme keeps them.
//! * [`simulate_mixture`]: OOD inputs where a fixed fraction of models is
//!   "active" (p-values drawn from `Beta(a, 1)`); measures BH power and FDR.
//! * [`synth_benchmark`]: a small Gaussian feature world in which each model
//!   sees only some coordinates, so models are blind to different OOD
//!   clusters, run through the full scoring pipeline.
//! * [`explain_sample`]: which models drove a BH decision.
//!
//! Every simulation is a pure function of its config and seed.

mod explain;
mod mixture;
mod synth;
mod uniform;

use thiserror::Error;

pub use explain::{explain_sample, Attribution};
pub use mixture::{simulate_mixture, MixtureSimConfig, PowerStats};
pub use synth::{
    generate_zoo, synth_benchmark, write_bundle, OodCluster, SynthBenchConfig, SynthModel,
};
pub use uniform::{simulate_id_uniform, IdUniformSimConfig, SchemeRate};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

fn std_error(rate: f64, trials: usize) -> f64 {
    (rate * (1.0 - rate) / trials as f64).sqrt()
}
