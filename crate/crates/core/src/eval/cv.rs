use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{heldout_predictive_loglik, missing_lab_loglik, split_records, LabCombiner};
use crate::corpus::Corpus;
use crate::cvb::{train, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::estimates::{infer_mixtures, point_estimates, DEFAULT_INFER_SWEEPS};
use crate::rng;
use crate::simulate::MaskedTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub seed: u64,
    /// Share of each held-out patient's units scored rather than conditioned on.
    pub eval_fraction: f64,
    pub infer_sweeps: usize,
    pub combiner: LabCombiner,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: 5,
            seed: 0,
            eval_fraction: 0.5,
            infer_sweeps: DEFAULT_INFER_SWEEPS,
            combiner: LabCombiner::AsWritten,
        }
    }
}

impl CvPlan {
    fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Validation(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.folds > n {
            return Err(Error::Validation(format!("{} folds for only {n} patients", self.folds)));
        }
        if !(0.0..=1.0).contains(&self.eval_fraction) {
            return Err(Error::Validation("eval fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Partitions `0..n` into `folds` shuffled folds whose sizes differ by at most
/// one. With `strata`, each class is dealt round-robin so every fold gets its
/// share of both classes (±1).
pub fn make_folds(n: usize, folds: usize, seed: u64, strata: Option<&[bool]>) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::Validation(format!("cannot split {n} items into {folds} folds")));
    }
    let mut rng = rng::stream(seed, "cv-folds", 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    if let Some(labels) = strata {
        if labels.len() != n {
            return Err(Error::Validation("strata length does not match the item count".into()));
        }
        let (pos, neg): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| labels[i]);
        order = pos.into_iter().chain(neg).collect();
    }
    let mut out = vec![Vec::new(); folds];
    for (i, idx) in order.into_iter().enumerate() {
        out[i % folds].push(idx);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut held = vec![false; n];
    fold.iter().for_each(|&i| held[i] = true);
    (0..n).filter(|&i| !held[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: usize,
    pub fold: usize,
    /// Mean held-out predictive log likelihood per scored patient.
    pub metric: Option<f64>,
    pub error: Option<String>,
}

fn cv_cell(corpus: &Corpus, plan: &CvPlan, cfg: &TrainConfig, fold: usize, held: &[usize]) -> Result<f64> {
    let train_set = corpus.subset(&complement(corpus.num_patients(), held));
    let model = train(&train_set, cfg)?;
    let est = point_estimates(&model);
    let held_set = corpus.subset(held);
    let halves = split_records(&held_set.patients, plan.eval_fraction, plan.seed ^ (fold as u64).wrapping_mul(0x9e37_79b9));
    Ok(heldout_predictive_loglik(&est, &halves, plan.infer_sweeps, plan.combiner)?.mean)
}

/// Trains every configuration on every fold split and scores the held-out
/// fold. A failing cell is reported in its row rather than aborting the run.
pub fn run_cv(corpus: &Corpus, plan: &CvPlan, cfgs: &[TrainConfig]) -> Result<Vec<CvRow>> {
    plan.validate(corpus.num_patients())?;
    for cfg in cfgs {
        cfg.validate()?;
    }
    let folds = make_folds(corpus.num_patients(), plan.folds, plan.seed, None)?;
    let cells: Vec<(usize, usize)> = (0..cfgs.len()).flat_map(|c| (0..folds.len()).map(move |f| (c, f))).collect();
    Ok(cells
        .par_iter()
        .map(|&(c, f)| match cv_cell(corpus, plan, &cfgs[c], f, &folds[f]) {
            Ok(m) => CvRow {
                config: c,
                fold: f,
                metric: Some(m),
                error: None,
            },
            Err(e) => {
                log::warn!("config {c} fold {f} failed: {e}");
                CvRow {
                    config: c,
                    fold: f,
                    metric: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub config: usize,
    pub mean: f64,
    pub sd: f64,
    /// `sd / √folds`.
    pub se: f64,
    pub folds_ok: usize,
}

/// Per-configuration mean, spread and standard error over successful folds,
/// plus the index of the best configuration by mean.
pub fn summarize(rows: &[CvRow], configs: usize) -> (Vec<CvSummary>, Option<usize>) {
    let summaries: Vec<CvSummary> = (0..configs)
        .map(|c| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.config == c).filter_map(|r| r.metric).collect();
            let n = vals.len() as f64;
            let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / n };
            let sd = if vals.len() < 2 {
                f64::NAN
            } else {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            CvSummary {
                config: c,
                mean,
                sd,
                se: sd / n.sqrt(),
                folds_ok: vals.len(),
            }
        })
        .collect();
    let best = summaries
        .iter()
        .filter(|s| s.mean.is_finite())
        .max_by(|a, b| a.mean.total_cmp(&b.mean))
        .map(|s| s.config);
    (summaries, best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationCurve {
    pub fold: usize,
    /// `(iterations trained, mean missing-lab log likelihood)`.
    pub points: Vec<(usize, f64)>,
}

/// Held-out imputation accuracy over training. For each fold, trains on the
/// remaining patients and, at each checkpoint iteration, infers the held-out
/// patients' mixtures from everything they recorded and scores the hidden
/// values in `targets` (patient indices refer to `corpus`).
pub fn imputation_cv(
    corpus: &Corpus,
    targets: &[MaskedTarget],
    plan: &CvPlan,
    cfg: &TrainConfig,
    checkpoints: &[usize],
) -> Result<Vec<ImputationCurve>> {
    plan.validate(corpus.num_patients())?;
    cfg.validate()?;
    let mut checkpoints = checkpoints.to_vec();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let folds = make_folds(corpus.num_patients(), plan.folds, plan.seed, None)?;
    folds
        .par_iter()
        .enumerate()
        .map(|(f, held)| {
            let train_set = corpus.subset(&complement(corpus.num_patients(), held));
            let held_set = corpus.subset(held);
            let mut local = vec![usize::MAX; corpus.num_patients()];
            held.iter().enumerate().for_each(|(i, &j)| local[j] = i);
            let fold_targets: Vec<MaskedTarget> = targets
                .iter()
                .filter(|t| local[t.patient] != usize::MAX)
                .map(|t| MaskedTarget {
                    patient: local[t.patient],
                    ..*t
                })
                .collect();
            let mut trainer = Trainer::new(&train_set, cfg)?;
            let mut points = Vec::with_capacity(checkpoints.len());
            for &cp in &checkpoints {
                while trainer.model().iterations < cp {
                    trainer.step()?;
                }
                let est = point_estimates(trainer.model());
                let mix = infer_mixtures(&held_set.patients, &est, plan.infer_sweeps);
                points.push((cp, missing_lab_loglik(&est, &fold_targets, &mix, plan.combiner)?));
            }
            Ok(ImputationCurve { fold: f, points })
        })
        .collect()
}
