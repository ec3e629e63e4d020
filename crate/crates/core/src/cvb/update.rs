//! CVB0 responsibility updates. Every function expects statistics and loads
//! from which the variable's own expected contribution has already been
//! removed.

use super::hyper::Hyperparams;
use super::stats::GlobalStats;
use crate::error::{Error, Result};

/// Added to every ratio denominator.
pub const DENOM_EPS: f64 = 1e-12;
/// Lower bound applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;

/// Hyperparameter sums reused by every update within a sweep.
#[derive(Debug, Clone)]
pub struct UpdateContext<'a> {
    pub hp: &'a Hyperparams,
    pub beta_sums: Vec<f64>,
    pub zeta_sums: Vec<f64>,
}

impl<'a> UpdateContext<'a> {
    pub fn new(hp: &'a Hyperparams) -> Self {
        UpdateContext {
            hp,
            beta_sums: hp.beta.iter().map(|b| b.iter().sum()).collect(),
            zeta_sums: hp.zeta.iter().map(|z| z.iter().sum()).collect(),
        }
    }
}

fn normalize(out: &mut [f64], what: &str) -> Result<()> {
    let total: f64 = out.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical(format!("{what}: normalizer is {total}")));
    }
    out.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

fn softmax_in_place(out: &mut [f64], what: &str) -> Result<()> {
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(format!("{what}: log weight is {max}")));
    }
    out.iter_mut().for_each(|x| *x = (*x - max).exp());
    normalize(out, what)
}

/// Responsibility of a regular token `(ty, feature)`:
/// `γ_k ∝ (α_k + ñ_jk + m̃_jk) (β_w + ñ_wk) / (Σβ + ñ_k)`.
pub fn update_gamma(
    ctx: &UpdateContext,
    stats: &GlobalStats,
    ty: usize,
    feature: usize,
    n_jk: &[f64],
    m_jk: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let k = stats.topics;
    let ts = &stats.types[ty];
    let beta_w = ctx.hp.beta[ty][feature];
    let beta_sum = ctx.beta_sums[ty];
    let row = &ts.counts[feature * k..(feature + 1) * k];
    for kk in 0..k {
        let doc = ctx.hp.alpha[kk] + n_jk[kk] + m_jk[kk];
        out[kk] = doc * (beta_w + row[kk]) / (beta_sum + ts.totals[kk] + DENOM_EPS);
    }
    normalize(out, "gamma")
}

/// Topic responsibility of an observed lab with result counts `values`.
/// The value ratio enters once per observed result; the observation factor
/// `(a + p̃_k) / (a + p̃_k + b + q̃_k)` enters once and only when `nmar` is set.
pub fn update_lambda_observed(
    ctx: &UpdateContext,
    stats: &GlobalStats,
    lab: usize,
    values: &[(usize, u32)],
    n_jk: &[f64],
    m_jk: &[f64],
    nmar: bool,
    out: &mut [f64],
) -> Result<()> {
    let k = stats.topics;
    let ls = &stats.labs[lab];
    let zeta = &ctx.hp.zeta[lab];
    let zeta_sum = ctx.zeta_sums[lab];
    let v_count = zeta.len();
    let (a, b) = (ctx.hp.a[lab], ctx.hp.b[lab]);
    for kk in 0..k {
        let doc = ctx.hp.alpha[kk] + n_jk[kk] + m_jk[kk];
        let mut logw = doc.max(LOG_FLOOR).ln();
        let denom = (zeta_sum + ls.value_totals[kk] + DENOM_EPS).ln();
        for &(v, c) in values {
            let num = (zeta[v] + ls.values[kk * v_count + v]).max(LOG_FLOOR);
            logw += c as f64 * (num.ln() - denom);
        }
        if nmar {
            let p = a + ls.observed[kk];
            logw += (p.max(LOG_FLOOR) / (p + b + ls.missing[kk] + DENOM_EPS)).ln();
        }
        out[kk] = logw;
    }
    softmax_in_place(out, "lambda")
}

/// Joint topic × value responsibility of a missing lab, row-major `K × V_l`:
/// `π_kv ∝ (α_k + ñ_jk + m̃_jk) (ζ_v + m̃_kv)/(Σζ + m̃_k) (b + q̃_k)/(a + p̃_k + b + q̃_k)`.
pub fn update_pi_missing(
    ctx: &UpdateContext,
    stats: &GlobalStats,
    lab: usize,
    n_jk: &[f64],
    m_jk: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let k = stats.topics;
    let ls = &stats.labs[lab];
    let zeta = &ctx.hp.zeta[lab];
    let zeta_sum = ctx.zeta_sums[lab];
    let v_count = zeta.len();
    let (a, b) = (ctx.hp.a[lab], ctx.hp.b[lab]);
    for kk in 0..k {
        let doc = ctx.hp.alpha[kk] + n_jk[kk] + m_jk[kk];
        let q = b + ls.missing[kk];
        let obs = q / (a + ls.observed[kk] + q + DENOM_EPS);
        let scale = doc * obs / (zeta_sum + ls.value_totals[kk] + DENOM_EPS);
        for v in 0..v_count {
            out[kk * v_count + v] = scale * (zeta[v] + ls.values[kk * v_count + v]);
        }
    }
    normalize(out, "pi")
}
