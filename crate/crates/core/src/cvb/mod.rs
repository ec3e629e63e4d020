//! Joint collapsed variational Bayes (CVB0) training.
//!
//! Regular tokens, observed labs and missing labs share one patient-topic
//! mixture. Missing labs carry a joint topic × value responsibility so that
//! the absence of a test informs the patient's topics (the NMAR channel).

mod hyper;
mod likelihood;
mod stats;
mod train;
mod update;

use serde::{Deserialize, Serialize};

pub use hyper::{m_step, GammaPrior, HyperInit, HyperPriors, Hyperparams, HYPER_FLOOR};
pub use likelihood::joint_log_likelihood;
pub use stats::{aggregate, GlobalStats, LabStats, PatientPosterior, TypeStats};
pub use train::{e_step, init_posteriors, train, TraceEntry, TrainedModel, Trainer};
pub use update::{update_gamma, update_lambda_observed, update_pi_missing, UpdateContext, DENOM_EPS, LOG_FLOOR};

use crate::error::{Error, Result};

/// Which channels a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Model the observation indicator and infer values of missing labs.
    pub nmar: bool,
    /// Include the regular data types alongside the labs.
    pub mixview: bool,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match (self.nmar, self.mixview) {
            (true, true) => "nmar-mixview",
            (true, false) => "nmar-labview",
            (false, true) => "mar-mixview",
            (false, false) => "mar-labview",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub topics: usize,
    pub max_iters: usize,
    /// Stop when `|Δℓ| / |ℓ|` of the training log likelihood drops below this.
    pub tol: f64,
    pub seed: u64,
    pub nmar: bool,
    pub mixview: bool,
    /// Run the hyperparameter M-step after every this many sweeps; 0 disables it.
    pub hyper_update_every: usize,
    /// Sweeps run with the initial hyperparameters before the first M-step.
    #[serde(default)]
    pub hyper_burn_in: usize,
    /// Patient shards for the E-step. 1 gives fully sequential leave-one-out
    /// updates; more shards update against a per-sweep snapshot and merge
    /// their deltas in shard order.
    pub shards: usize,
    pub init: HyperInit,
    pub priors: HyperPriors,
}

pub const DEFAULT_HYPER_BURN_IN: usize = 20;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            topics: 10,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            nmar: true,
            mixview: true,
            hyper_update_every: 1,
            hyper_burn_in: DEFAULT_HYPER_BURN_IN,
            shards: 1,
            init: HyperInit::default(),
            priors: HyperPriors::default(),
        }
    }
}

impl TrainConfig {
    pub fn variant(&self) -> Variant {
        Variant {
            nmar: self.nmar,
            mixview: self.mixview,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::Validation("topic count must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Validation(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.shards == 0 {
            return Err(Error::Validation("shard count must be at least 1".into()));
        }
        let init = &self.init;
        if [init.alpha, init.beta, init.zeta, init.a, init.b].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Validation("initial hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }
}
