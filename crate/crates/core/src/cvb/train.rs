use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hyper::{m_step, Hyperparams};
use super::likelihood::joint_log_likelihood;
use super::stats::{aggregate, init_patient, GlobalStats, PatientPosterior};
use super::update::{update_gamma, update_lambda_observed, update_pi_missing, UpdateContext};
use super::{TrainConfig, Variant};
use crate::corpus::{Corpus, PatientRecord, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub loglik: f64,
    pub delta: f64,
}

/// Everything needed to score, export, or resume a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema: Schema,
    pub config: TrainConfig,
    pub hyper: Hyperparams,
    pub stats: GlobalStats,
    /// External ids of the training patients, in dense order.
    pub patient_ids: Vec<i64>,
    /// Training-patient responsibilities, present when the model can be resumed.
    pub posteriors: Option<Vec<PatientPosterior>>,
    pub initial_loglik: f64,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

impl TrainedModel {
    pub fn variant(&self) -> Variant {
        self.config.variant()
    }

    pub fn topics(&self) -> usize {
        self.config.topics
    }

    /// The model without the per-patient checkpoint.
    pub fn compact(mut self) -> Self {
        self.posteriors = None;
        self
    }
}

/// Seeded initial responsibilities and the statistics they aggregate to.
pub fn init_posteriors(corpus: &Corpus, cfg: &TrainConfig) -> Result<(Vec<PatientPosterior>, GlobalStats)> {
    cfg.validate()?;
    if corpus.num_patients() == 0 {
        return Err(Error::Validation("cannot train on an empty corpus".into()));
    }
    let variant = cfg.variant();
    let value_counts = corpus.schema.lab_value_counts();
    let posteriors: Vec<PatientPosterior> = corpus
        .patients
        .par_iter()
        .enumerate()
        .map(|(j, rec)| init_patient(rec, &value_counts, cfg.topics, variant, cfg.seed, j as u64))
        .collect();
    let stats = aggregate(corpus, &posteriors, cfg.topics, variant);
    Ok((posteriors, stats))
}

/// One leave-one-out pass over a single patient, in the fixed order
/// tokens → observed labs → missing labs.
fn sweep_patient(
    ctx: &UpdateContext,
    stats: &mut GlobalStats,
    rec: &PatientRecord,
    post: &mut PatientPosterior,
    value_counts: &[usize],
    variant: Variant,
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let k = stats.topics;
    scratch.resize(k * value_counts.iter().copied().max().unwrap_or(1).max(1), 0.0);

    if variant.mixview {
        for (i, tok) in rec.tokens.iter().enumerate() {
            let c = tok.count as f64;
            let row = &mut post.gamma[i * k..(i + 1) * k];
            for kk in 0..k {
                post.n_jk[kk] -= c * row[kk];
            }
            stats.add_token(tok.ty, tok.feature, row, -c);
            update_gamma(ctx, stats, tok.ty, tok.feature, &post.n_jk, &post.m_jk, row)?;
            for kk in 0..k {
                post.n_jk[kk] += c * row[kk];
            }
            stats.add_token(tok.ty, tok.feature, row, c);
        }
    }

    for (o, lab) in rec.observed.iter().enumerate() {
        let total = lab.total() as f64;
        let row = &mut post.lambda[o * k..(o + 1) * k];
        for kk in 0..k {
            post.m_jk[kk] -= total * row[kk];
        }
        stats.add_observed(lab.lab, &lab.values, row, -1.0, variant.nmar);
        update_lambda_observed(ctx, stats, lab.lab, &lab.values, &post.n_jk, &post.m_jk, variant.nmar, row)?;
        for kk in 0..k {
            post.m_jk[kk] += total * row[kk];
        }
        stats.add_observed(lab.lab, &lab.values, row, 1.0, variant.nmar);
    }

    if variant.nmar {
        let mut off = 0;
        for &l in &rec.missing {
            let v = value_counts[l];
            let block = &mut post.pi[off..off + k * v];
            for kk in 0..k {
                post.m_jk[kk] -= block[kk * v..(kk + 1) * v].iter().sum::<f64>();
            }
            stats.add_missing(l, block, -1.0);
            update_pi_missing(ctx, stats, l, &post.n_jk, &post.m_jk, block)?;
            for kk in 0..k {
                post.m_jk[kk] += block[kk * v..(kk + 1) * v].iter().sum::<f64>();
            }
            stats.add_missing(l, block, 1.0);
            off += k * v;
        }
    }
    Ok(())
}

fn loads_of(posteriors: &[PatientPosterior]) -> Vec<Vec<f64>> {
    posteriors.iter().map(|p| p.load()).collect()
}

fn training_loglik(stats: &GlobalStats, hp: &Hyperparams, posteriors: &[PatientPosterior]) -> Result<f64> {
    let loads = loads_of(posteriors);
    joint_log_likelihood(stats, hp, loads.iter().map(|l| l.as_slice()))
}

/// One full E-step sweep over all patients. Returns the collapsed training
/// log likelihood at the end of the sweep.
///
/// With `cfg.shards == 1` each update sees every earlier update of the same
/// sweep. With more shards, each contiguous patient shard starts from the
/// statistics at the beginning of the sweep; shard deltas are summed in shard
/// order so the result does not depend on the thread count.
pub fn e_step(
    corpus: &Corpus,
    posteriors: &mut [PatientPosterior],
    stats: &mut GlobalStats,
    hp: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<f64> {
    let ctx = UpdateContext::new(hp);
    let variant = cfg.variant();
    let value_counts = corpus.schema.lab_value_counts();
    let d = corpus.num_patients();

    if cfg.shards <= 1 || d <= 1 {
        let mut scratch = Vec::new();
        for (rec, post) in corpus.patients.iter().zip(posteriors.iter_mut()) {
            sweep_patient(&ctx, stats, rec, post, &value_counts, variant, &mut scratch)?;
        }
    } else {
        let shard_len = d.div_ceil(cfg.shards);
        let snapshot = stats.clone();
        let deltas: Vec<Result<GlobalStats>> = corpus
            .patients
            .par_chunks(shard_len)
            .zip(posteriors.par_chunks_mut(shard_len))
            .map(|(recs, posts)| {
                let mut local = snapshot.clone();
                let mut scratch = Vec::new();
                for (rec, post) in recs.iter().zip(posts.iter_mut()) {
                    sweep_patient(&ctx, &mut local, rec, post, &value_counts, variant, &mut scratch)?;
                }
                local.sub(&snapshot);
                Ok(local)
            })
            .collect();
        for delta in deltas {
            stats.add(&delta?);
        }
    }
    training_loglik(stats, hp, posteriors)
}

/// Resumable EM driver.
pub struct Trainer<'a> {
    corpus: &'a Corpus,
    model: TrainedModel,
    posteriors: Vec<PatientPosterior>,
    seconds: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, cfg: &TrainConfig) -> Result<Self> {
        let hyper = Hyperparams::symmetric(&corpus.schema, cfg.topics, &cfg.init, cfg.priors);
        Self::with_hyperparams(corpus, cfg, hyper)
    }

    /// Starts from explicit, possibly asymmetric, hyperparameters.
    pub fn with_hyperparams(corpus: &'a Corpus, cfg: &TrainConfig, hyper: Hyperparams) -> Result<Self> {
        if hyper.topics() != cfg.topics || !hyper.is_valid() {
            return Err(Error::Validation("hyperparameters do not match the configuration".into()));
        }
        let (posteriors, stats) = init_posteriors(corpus, cfg)?;
        let initial_loglik = training_loglik(&stats, &hyper, &posteriors)?;
        Ok(Trainer {
            corpus,
            model: TrainedModel {
                schema: corpus.schema.clone(),
                config: cfg.clone(),
                hyper,
                stats,
                patient_ids: corpus.patient_ids.clone(),
                posteriors: None,
                initial_loglik,
                iterations: 0,
                trace: Vec::new(),
            },
            posteriors,
            seconds: Vec::new(),
        })
    }

    /// Continues training a checkpointed model on the corpus it was trained on.
    pub fn resume(corpus: &'a Corpus, mut model: TrainedModel) -> Result<Self> {
        if model.schema != corpus.schema {
            return Err(Error::Validation("corpus schema does not match the model".into()));
        }
        if model.patient_ids != corpus.patient_ids {
            return Err(Error::Validation("corpus patients do not match the model's training patients".into()));
        }
        let posteriors = model
            .posteriors
            .take()
            .ok_or_else(|| Error::Validation("model has no posterior checkpoint to resume from".into()))?;
        if posteriors.len() != corpus.num_patients() {
            return Err(Error::Validation("checkpoint size does not match the corpus".into()));
        }
        Ok(Trainer {
            corpus,
            model,
            posteriors,
            seconds: Vec::new(),
        })
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    pub fn posteriors(&self) -> &[PatientPosterior] {
        &self.posteriors
    }

    /// Wall-clock seconds of each sweep run by this trainer.
    pub fn seconds(&self) -> &[f64] {
        &self.seconds
    }

    pub fn set_shards(&mut self, shards: usize) {
        self.model.config.shards = shards.max(1);
    }

    /// One E-step sweep, followed by an M-step when the stride is due.
    pub fn step(&mut self) -> Result<TraceEntry> {
        let start = Instant::now();
        let cfg = self.model.config.clone();
        let loglik = e_step(
            self.corpus,
            &mut self.posteriors,
            &mut self.model.stats,
            &self.model.hyper,
            &cfg,
        )?;
        self.model.iterations += 1;
        let iter = self.model.iterations;
        if cfg.hyper_update_every > 0 && iter > cfg.hyper_burn_in && iter % cfg.hyper_update_every == 0 {
            let loads = loads_of(&self.posteriors);
            self.model.hyper = m_step(&self.model.stats, &self.model.hyper, &loads, cfg.nmar);
        }
        let prev = self.model.trace.last().map_or(self.model.initial_loglik, |e| e.loglik);
        let entry = TraceEntry {
            iter,
            loglik,
            delta: loglik - prev,
        };
        self.model.trace.push(entry.clone());
        self.seconds.push(start.elapsed().as_secs_f64());
        Ok(entry)
    }

    /// Runs up to `max_iters` more sweeps, stopping early once the relative
    /// change of the training log likelihood falls below the tolerance.
    pub fn run(&mut self, max_iters: usize) -> Result<()> {
        let tol = self.model.config.tol;
        for _ in 0..max_iters {
            let entry = self.step()?;
            let prev = entry.loglik - entry.delta;
            let rel = if prev == 0.0 {
                entry.delta.abs()
            } else {
                entry.delta.abs() / prev.abs()
            };
            log::debug!("iter {} loglik {:.6} rel {:.3e}", entry.iter, entry.loglik, rel);
            if rel < tol {
                break;
            }
        }
        Ok(())
    }

    /// The trained model with its posterior checkpoint attached.
    pub fn finish(self) -> TrainedModel {
        let mut model = self.model;
        model.posteriors = Some(self.posteriors);
        model
    }

    /// A copy of the current model with the checkpoint attached.
    pub fn snapshot(&self) -> TrainedModel {
        let mut model = self.model.clone();
        model.posteriors = Some(self.posteriors.clone());
        model
    }
}

/// Alternates E- and M-steps until convergence or `cfg.max_iters`.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainedModel> {
    let mut trainer = Trainer::new(corpus, cfg)?;
    trainer.run(cfg.max_iters)?;
    Ok(trainer.finish())
}
