//! Held-out scoring, cross-validation and the exact enumeration oracle.

mod cv;
mod matching;
mod oracle;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cv::{imputation_cv, make_folds, run_cv, summarize, CvPlan, CvRow, CvSummary, ImputationCurve};
pub use matching::{cosine_similarity, hungarian_max, match_topics};
pub use oracle::{OracleResult, OracleVar, TinyOracle, ORACLE_SPACE_LIMIT};

use crate::corpus::PatientRecord;
use crate::cvb::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::estimates::{infer_mixture, PatientMixture, TopicEstimates};
use crate::rng;
use crate::simulate::MaskedTarget;

/// How the observation rate and the result probability of a lab combine in
/// predictive scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LabCombiner {
    /// `ψ̂_lk + η̂_lkv`.
    #[default]
    AsWritten,
    /// `ψ̂_lk · η̂_lkv`.
    Product,
    /// The result probability conditioned on whether the test was taken:
    /// `Σ_k θ_k ψ̂_lk η̂_lkv / Σ_k θ_k ψ̂_lk` for taken tests and the same with
    /// `1 − ψ̂_lk` for untaken ones.
    Imputed,
}

impl LabCombiner {
    /// Predictive probability of result `value` of `lab` under mixture `theta`.
    /// `taken` says whether the test was performed.
    pub fn lab_probability(self, est: &TopicEstimates, theta: &[f64], lab: usize, value: usize, taken: bool) -> f64 {
        let psi = &est.psi[lab];
        let eta = |k: usize| est.eta_at(lab, k, value);
        match self {
            LabCombiner::AsWritten => (0..est.topics).map(|k| theta[k] * (psi[k] + eta(k))).sum(),
            LabCombiner::Product => (0..est.topics).map(|k| theta[k] * psi[k] * eta(k)).sum(),
            LabCombiner::Imputed => {
                let (mut num, mut den) = (0.0, 0.0);
                for k in 0..est.topics {
                    let w = theta[k] * if taken { psi[k] } else { 1.0 - psi[k] };
                    num += w * eta(k);
                    den += w;
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for LabCombiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(LabCombiner::AsWritten),
            "product" => Ok(LabCombiner::Product),
            "imputed" => Ok(LabCombiner::Imputed),
            other => Err(Error::Validation(format!(
                "unknown combiner {other:?} (expected as-written, product or imputed)"
            ))),
        }
    }
}

/// Splits one record into an observation half and an evaluation half.
///
/// Each distinct token entry and each lab test (taken or not) goes to the
/// evaluation half with probability `eval_fraction`. A lab routed to the
/// evaluation half is unknown to the observation half, so it is neither
/// observed nor missing there.
pub fn split_record<R: Rng>(rec: &PatientRecord, eval_fraction: f64, rng: &mut R) -> (PatientRecord, PatientRecord) {
    let mut obs = PatientRecord::default();
    let mut eval = PatientRecord::default();
    for t in &rec.tokens {
        if rng.random::<f64>() < eval_fraction {
            eval.tokens.push(*t);
        } else {
            obs.tokens.push(*t);
        }
    }
    // Decide per lab in lab order so taken and untaken tests share one stream.
    let num_labs = rec.observed.iter().map(|o| o.lab + 1).chain(rec.missing.iter().map(|&l| l + 1)).max().unwrap_or(0);
    let mut oi = 0;
    for l in 0..num_labs {
        let observed = rec.observed.get(oi).filter(|o| o.lab == l);
        let is_missing = rec.missing.binary_search(&l).is_ok();
        if observed.is_none() && !is_missing {
            continue;
        }
        let to_eval = rng.random::<f64>() < eval_fraction;
        match (observed, to_eval) {
            (Some(o), true) => eval.observed.push(o.clone()),
            (Some(o), false) => obs.observed.push(o.clone()),
            (None, false) => obs.missing.push(l),
            (None, true) => {}
        }
        if observed.is_some() {
            oi += 1;
        }
    }
    (obs, eval)
}

/// Splits every record with a per-patient seeded stream.
pub fn split_records(records: &[PatientRecord], eval_fraction: f64, seed: u64) -> Vec<(PatientRecord, PatientRecord)> {
    records
        .iter()
        .enumerate()
        .map(|(j, r)| split_record(r, eval_fraction, &mut rng::stream(seed, "heldout-split", j as u64)))
        .collect()
}

/// Log predictive probability of an evaluation half under mixture `theta`:
/// `Σ_tokens c log Σ_k θ_k φ̂_wk + Σ_labs Σ_v y_v log p(v)` with the lab
/// probability given by the combiner.
pub fn predictive_loglik(est: &TopicEstimates, theta: &[f64], eval: &PatientRecord, combiner: LabCombiner) -> f64 {
    let k = est.topics;
    let mut ll = 0.0;
    for t in &eval.tokens {
        let p: f64 = (0..k).map(|kk| theta[kk] * est.phi_at(t.ty, t.feature, kk)).sum();
        ll += t.count as f64 * p.max(LOG_FLOOR).ln();
    }
    for o in &eval.observed {
        for &(v, c) in &o.values {
            let p = combiner.lab_probability(est, theta, o.lab, v, true);
            ll += c as f64 * p.max(LOG_FLOOR).ln();
        }
    }
    ll
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScore {
    /// Per patient; `None` where the evaluation half is empty.
    pub per_patient: Vec<Option<f64>>,
    pub total: f64,
    pub mean: f64,
    pub scored: usize,
}

/// Infers each patient's mixture from the observation half and scores the
/// evaluation half. Patients with an empty evaluation half are skipped.
pub fn heldout_predictive_loglik(
    est: &TopicEstimates,
    halves: &[(PatientRecord, PatientRecord)],
    sweeps: usize,
    combiner: LabCombiner,
) -> Result<HeldoutScore> {
    use rayon::prelude::*;
    let per_patient: Vec<Option<f64>> = halves
        .par_iter()
        .map(|(obs, eval)| {
            if eval.tokens.is_empty() && eval.observed.is_empty() {
                return None;
            }
            let theta = infer_mixture(obs, est, sweeps).theta;
            Some(predictive_loglik(est, &theta, eval, combiner))
        })
        .collect();
    let skipped = per_patient.iter().filter(|x| x.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} patients have an empty evaluation half and are excluded");
    }
    let scored = per_patient.len() - skipped;
    if scored == 0 {
        return Err(Error::Validation("no patient has a non-empty evaluation half".into()));
    }
    let total: f64 = per_patient.iter().flatten().sum();
    Ok(HeldoutScore {
        per_patient,
        total,
        mean: total / scored as f64,
        scored,
    })
}

/// Mean log predictive probability of the hidden result of each untaken test.
pub fn missing_lab_loglik(
    est: &TopicEstimates,
    targets: &[MaskedTarget],
    mixtures: &[PatientMixture],
    combiner: LabCombiner,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Validation("empty imputation target set".into()));
    }
    let total: f64 = targets
        .iter()
        .map(|t| {
            let p = combiner.lab_probability(est, &mixtures[t.patient].theta, t.lab, t.value, false);
            p.max(LOG_FLOOR).ln()
        })
        .sum();
    Ok(total / targets.len() as f64)
}
