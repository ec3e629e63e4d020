use statrs::function::gamma::ln_gamma;

use super::hyper::Hyperparams;
use super::stats::GlobalStats;
use crate::error::{Error, Result};

/// `log Γ(Σx) − Σ log Γ(x) + Σ log Γ(x + n) − log Γ(Σx + Σn)`: the log
/// Dirichlet-multinomial evidence of one count vector.
fn dirichlet_block(prior: &[f64], prior_sum: f64, counts: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut acc = 0.0;
    for (&x, n) in prior.iter().zip(counts) {
        if n != 0.0 {
            acc += ln_gamma(x + n) - ln_gamma(x);
            total += n;
        }
    }
    if total == 0.0 {
        return acc;
    }
    acc + ln_gamma(prior_sum) - ln_gamma(prior_sum + total)
}

/// Collapsed log joint `log p(x, y, r, z, h | α, β, ζ, a, b)` with expected
/// counts in place of hard counts. `loads` yields each patient's topic load
/// `ñ_jk + m̃_jk`.
///
/// Zero-count groups contribute exactly zero, so an empty corpus scores 0.
pub fn joint_log_likelihood<'a>(
    stats: &GlobalStats,
    hp: &Hyperparams,
    loads: impl IntoIterator<Item = &'a [f64]>,
) -> Result<f64> {
    let k = stats.topics;
    let alpha_sum: f64 = hp.alpha.iter().sum();
    let mut ll = 0.0;

    for load in loads {
        ll += dirichlet_block(&hp.alpha, alpha_sum, load.iter().copied());
    }

    for (t, ts) in stats.types.iter().enumerate() {
        let beta = &hp.beta[t];
        let beta_sum: f64 = beta.iter().sum();
        let w_count = beta.len();
        for kk in 0..k {
            ll += dirichlet_block(beta, beta_sum, (0..w_count).map(|w| ts.counts[w * k + kk]));
        }
    }

    for (l, ls) in stats.labs.iter().enumerate() {
        let zeta = &hp.zeta[l];
        let zeta_sum: f64 = zeta.iter().sum();
        let v_count = zeta.len();
        let ab = [hp.a[l], hp.b[l]];
        for kk in 0..k {
            ll += dirichlet_block(zeta, zeta_sum, ls.values[kk * v_count..(kk + 1) * v_count].iter().copied());
            ll += dirichlet_block(&ab, ab[0] + ab[1], [ls.observed[kk], ls.missing[kk]].into_iter());
        }
    }

    if !ll.is_finite() {
        return Err(Error::Numerical(format!("joint log likelihood is {ll}")));
    }
    Ok(ll)
}
