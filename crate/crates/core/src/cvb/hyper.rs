use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::stats::GlobalStats;
use crate::corpus::Schema;

/// Floor applied to every hyperparameter after an M-step.
pub const HYPER_FLOOR: f64 = 1e-8;

/// Gamma(shape, rate) hyperprior on a Dirichlet or Beta parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        GammaPrior { shape: 2.0, rate: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperPriors {
    pub alpha: GammaPrior,
    pub beta: GammaPrior,
    pub zeta: GammaPrior,
    pub ab: GammaPrior,
}

/// Symmetric starting values for the hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperInit {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for HyperInit {
    fn default() -> Self {
        HyperInit {
            alpha: 0.5,
            beta: 0.1,
            zeta: 1.0,
            a: 1.0,
            b: 1.0,
        }
    }
}

/// Dirichlet and Beta hyperparameters of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Patient-topic Dirichlet, length K.
    pub alpha: Vec<f64>,
    /// Topic-feature Dirichlet per regular type, length W_t each.
    pub beta: Vec<Vec<f64>>,
    /// Topic-value Dirichlet per lab, length V_l each.
    pub zeta: Vec<Vec<f64>>,
    /// Beta shapes of the lab observation rate, one per lab.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub priors: HyperPriors,
}

impl Hyperparams {
    pub fn symmetric(schema: &Schema, topics: usize, init: &HyperInit, priors: HyperPriors) -> Self {
        Hyperparams {
            alpha: vec![init.alpha; topics],
            beta: schema.regular_feature_counts().iter().map(|&w| vec![init.beta; w]).collect(),
            zeta: schema.lab_value_counts().iter().map(|&v| vec![init.zeta; v]).collect(),
            a: vec![init.a; schema.num_labs()],
            b: vec![init.b; schema.num_labs()],
            priors,
        }
    }

    pub fn topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn all_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha
            .iter()
            .chain(self.beta.iter().flatten())
            .chain(self.zeta.iter().flatten())
            .chain(&self.a)
            .chain(&self.b)
            .copied()
    }

    pub fn is_valid(&self) -> bool {
        self.all_values().all(|x| x.is_finite() && x > 0.0)
    }
}

/// Sum over groups of `Ψ(x + n) − Ψ(x)`, skipping zero counts.
fn digamma_gain(x: f64, counts: impl Iterator<Item = f64>) -> f64 {
    let base = digamma(x);
    counts.filter(|&n| n != 0.0).map(|n| digamma(x + n) - base).sum()
}

/// One Minka fixed-point step for a single Dirichlet coordinate under a
/// Gamma(shape, rate) hyperprior:
/// `x ← (shape − 1 + x Σ_g [Ψ(x + n_g) − Ψ(x)]) / (rate + Σ_g [Ψ(X + N_g) − Ψ(X)])`.
fn fixed_point(x: f64, prior: GammaPrior, numer_gain: f64, denom_gain: f64, what: &str) -> f64 {
    let denom = prior.rate + denom_gain;
    if !(denom > 0.0) || !denom.is_finite() {
        warn!("{what}: non-positive fixed-point denominator {denom}, keeping {x}");
        return x;
    }
    let updated = (prior.shape - 1.0 + x * numer_gain) / denom;
    if !updated.is_finite() {
        warn!("{what}: non-finite update, keeping {x}");
        return x;
    }
    updated.max(HYPER_FLOOR)
}

/// Empirical-Bayes update of every hyperparameter (one Jacobi sweep of
/// digamma fixed-point steps, all gains evaluated at the current values).
///
/// `loads` holds each patient's topic loads `ñ_jk + m̃_jk`. The Beta shapes
/// are left untouched when `update_ab` is false (the MAR variant).
pub fn m_step(stats: &GlobalStats, hp: &Hyperparams, loads: &[Vec<f64>], update_ab: bool) -> Hyperparams {
    let k = hp.topics();
    let priors = hp.priors;
    let mut out = hp.clone();

    let alpha_sum: f64 = hp.alpha.iter().sum();
    let alpha_den: f64 = digamma_gain(alpha_sum, loads.iter().map(|row| row.iter().sum::<f64>()));
    for (kk, a) in out.alpha.iter_mut().enumerate() {
        let gain = digamma_gain(hp.alpha[kk], loads.iter().map(|row| row[kk]));
        *a = fixed_point(hp.alpha[kk], priors.alpha, gain, alpha_den, "alpha");
    }

    for (t, ts) in stats.types.iter().enumerate() {
        let beta = &hp.beta[t];
        let beta_sum: f64 = beta.iter().sum();
        let den = digamma_gain(beta_sum, ts.totals.iter().copied());
        for (w, b) in out.beta[t].iter_mut().enumerate() {
            let gain = digamma_gain(beta[w], ts.counts[w * k..(w + 1) * k].iter().copied());
            *b = fixed_point(beta[w], priors.beta, gain, den, "beta");
        }
    }

    for (l, ls) in stats.labs.iter().enumerate() {
        let zeta = &hp.zeta[l];
        let v_count = zeta.len();
        let zeta_sum: f64 = zeta.iter().sum();
        let den = digamma_gain(zeta_sum, ls.value_totals.iter().copied());
        for (v, z) in out.zeta[l].iter_mut().enumerate() {
            let gain = digamma_gain(zeta[v], (0..k).map(|kk| ls.values[kk * v_count + v]));
            *z = fixed_point(zeta[v], priors.zeta, gain, den, "zeta");
        }

        if update_ab {
            let (a, b) = (hp.a[l], hp.b[l]);
            let den = digamma_gain(a + b, (0..k).map(|kk| ls.observed[kk] + ls.missing[kk]));
            out.a[l] = fixed_point(a, priors.ab, digamma_gain(a, ls.observed.iter().copied()), den, "a");
            out.b[l] = fixed_point(b, priors.ab, digamma_gain(b, ls.missing.iter().copied()), den, "b");
        }
    }
    out
}
