//! Synthetic corpora drawn from the full generative process, with the hidden
//! results of untaken lab tests retained for imputation scoring.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{missing_complement, Corpus, LabResult, PatientRecord, Schema, Token};
use crate::error::{Error, Result};
use crate::rng;

/// A symmetric hyperparameter, either given or drawn once from a Gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Fixed(f64),
    Gamma { shape: f64, rate: f64 },
}

impl HyperValue {
    fn resolve<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            HyperValue::Fixed(x) if x > 0.0 && x.is_finite() => Ok(x),
            HyperValue::Fixed(x) => Err(Error::Validation(format!("hyperparameter must be positive, got {x}"))),
            HyperValue::Gamma { shape, rate } => {
                let g = Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::Validation(format!("bad hyperprior ({shape}, {rate}): {e}")))?;
                Ok(g.sample(rng).max(1e-8))
            }
        }
    }
}

/// Topic parameters that replace sampled ones when given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    /// `θ`, D × K.
    pub theta: Option<Vec<Vec<f64>>>,
    /// `φ[t][k][w]`.
    pub phi: Option<Vec<Vec<Vec<f64>>>>,
    /// `η[l][k][v]`.
    pub eta: Option<Vec<Vec<Vec<f64>>>>,
    /// `ψ[l][k]`.
    pub psi: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub patients: usize,
    pub topics: usize,
    /// `W_t` of each regular type.
    pub feature_counts: Vec<usize>,
    /// `V_l` of each lab test.
    pub lab_value_counts: Vec<usize>,
    /// Inclusive range of tokens drawn per patient and regular type.
    pub tokens_per_type: (u32, u32),
    /// Inclusive range of repeated results for a taken test.
    pub repeats: (u32, u32),
    pub alpha: HyperValue,
    pub beta: HyperValue,
    pub zeta: HyperValue,
    pub a: HyperValue,
    pub b: HyperValue,
    pub fixed: FixedParams,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            patients: 100,
            topics: 5,
            feature_counts: vec![50, 50],
            lab_value_counts: vec![2; 10],
            tokens_per_type: (20, 60),
            repeats: (1, 1),
            alpha: HyperValue::Fixed(0.1),
            beta: HyperValue::Fixed(0.1),
            zeta: HyperValue::Fixed(1.0),
            a: HyperValue::Fixed(0.5),
            b: HyperValue::Fixed(0.5),
            fixed: FixedParams::default(),
            seed: 0,
        }
    }
}

/// Hidden state of one (patient, lab) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabTruth {
    pub topic: usize,
    /// Result of the first (or only) draw; for missing tests this is the hidden value.
    pub value: usize,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub eta: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<f64>>,
    /// `labs[j][l]`.
    pub labs: Vec<Vec<LabTruth>>,
}

/// A held-out missing test with its true result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedTarget {
    pub patient: usize,
    pub lab: usize,
    pub value: usize,
}

fn sample_dirichlet<R: Rng>(rng: &mut R, conc: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = conc
        .iter()
        .map(|&c| Gamma::new(c, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let s: f64 = out.iter().sum();
    if s > 0.0 && s.is_finite() {
        out.iter_mut().for_each(|x| *x /= s);
    } else {
        let hot = rng.random_range(0..out.len());
        out.iter_mut().enumerate().for_each(|(i, x)| *x = if i == hot { 1.0 } else { 0.0 });
    }
    out
}

fn sample_categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in p.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

fn check_simplex(v: &[f64], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::Validation(format!("{what}: expected length {len}, got {}", v.len())));
    }
    let s: f64 = v.iter().sum();
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (s - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("{what}: not a probability vector (sum {s})")));
    }
    Ok(())
}

impl SimConfig {
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(&self.feature_counts, &self.lab_value_counts)
    }

    fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::Validation("topics must be at least 1".into()));
        }
        if self.tokens_per_type.0 > self.tokens_per_type.1 || self.repeats.0 > self.repeats.1 || self.repeats.0 == 0 {
            return Err(Error::Validation("invalid token or repeat range".into()));
        }
        let k = self.topics;
        let f = &self.fixed;
        if let Some(theta) = &f.theta {
            if theta.len() != self.patients {
                return Err(Error::Validation("fixed theta must have one row per patient".into()));
            }
            for row in theta {
                check_simplex(row, k, "theta")?;
            }
        }
        if let Some(phi) = &f.phi {
            if phi.len() != self.feature_counts.len() || phi.iter().any(|p| p.len() != k) {
                return Err(Error::Validation("fixed phi has wrong shape".into()));
            }
            for (t, per_type) in phi.iter().enumerate() {
                for row in per_type {
                    check_simplex(row, self.feature_counts[t], "phi")?;
                }
            }
        }
        if let Some(eta) = &f.eta {
            if eta.len() != self.lab_value_counts.len() || eta.iter().any(|p| p.len() != k) {
                return Err(Error::Validation("fixed eta has wrong shape".into()));
            }
            for (l, per_lab) in eta.iter().enumerate() {
                for row in per_lab {
                    check_simplex(row, self.lab_value_counts[l], "eta")?;
                }
            }
        }
        if let Some(psi) = &f.psi {
            if psi.len() != self.lab_value_counts.len()
                || psi.iter().any(|p| p.len() != k || p.iter().any(|&x| !(0.0..=1.0).contains(&x)))
            {
                return Err(Error::Validation("fixed psi must be L × K rates in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Draws a corpus and its ground truth.
pub fn simulate(cfg: &SimConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let schema = cfg.schema()?;
    let k = cfg.topics;
    let mut grng = rng::stream(cfg.seed, "sim-global", 0);

    let alpha = cfg.alpha.resolve(&mut grng)?;
    let beta = cfg.beta.resolve(&mut grng)?;
    let zeta = cfg.zeta.resolve(&mut grng)?;
    let a = cfg.a.resolve(&mut grng)?;
    let b = cfg.b.resolve(&mut grng)?;

    let phi = match &cfg.fixed.phi {
        Some(p) => p.clone(),
        None => cfg
            .feature_counts
            .iter()
            .map(|&w| (0..k).map(|_| sample_dirichlet(&mut grng, &vec![beta; w])).collect())
            .collect(),
    };
    let eta = match &cfg.fixed.eta {
        Some(e) => e.clone(),
        None => cfg
            .lab_value_counts
            .iter()
            .map(|&v| (0..k).map(|_| sample_dirichlet(&mut grng, &vec![zeta; v])).collect())
            .collect(),
    };
    let psi = match &cfg.fixed.psi {
        Some(p) => p.clone(),
        None => {
            let dist = Beta::new(a, b).map_err(|e| Error::Validation(format!("bad Beta({a}, {b}): {e}")))?;
            cfg.lab_value_counts
                .iter()
                .map(|_| (0..k).map(|_| dist.sample(&mut grng)).collect())
                .collect()
        }
    };

    let alpha_vec = vec![alpha; k];
    let drawn: Vec<(Vec<f64>, PatientRecord, Vec<LabTruth>)> = (0..cfg.patients)
        .into_par_iter()
        .map(|j| {
            let mut prng = rng::stream(cfg.seed, "sim-patient", j as u64);
            let theta = match &cfg.fixed.theta {
                Some(t) => t[j].clone(),
                None => sample_dirichlet(&mut prng, &alpha_vec),
            };
            let mut tokens = BTreeMap::new();
            for (t, per_type) in phi.iter().enumerate() {
                let m = prng.random_range(cfg.tokens_per_type.0..=cfg.tokens_per_type.1);
                for _ in 0..m {
                    let z = sample_categorical(&mut prng, &theta);
                    let x = sample_categorical(&mut prng, &per_type[z]);
                    *tokens.entry((t, x)).or_insert(0u32) += 1;
                }
            }
            let mut observed = Vec::new();
            let mut truths = Vec::with_capacity(eta.len());
            for l in 0..eta.len() {
                let h = sample_categorical(&mut prng, &theta);
                let y = sample_categorical(&mut prng, &eta[l][h]);
                let r = prng.random::<f64>() < psi[l][h];
                truths.push(LabTruth {
                    topic: h,
                    value: y,
                    observed: r,
                });
                if r {
                    let reps = prng.random_range(cfg.repeats.0..=cfg.repeats.1);
                    let mut counts = BTreeMap::new();
                    *counts.entry(y).or_insert(0u32) += 1;
                    for _ in 1..reps {
                        *counts.entry(sample_categorical(&mut prng, &eta[l][h])).or_insert(0u32) += 1;
                    }
                    observed.push(LabResult {
                        lab: l,
                        values: counts.into_iter().collect(),
                    });
                }
            }
            let missing = missing_complement(&observed, eta.len());
            let rec = PatientRecord {
                tokens: tokens
                    .into_iter()
                    .map(|((ty, feature), count)| Token { ty, feature, count })
                    .collect(),
                observed,
                missing,
            };
            (theta, rec, truths)
        })
        .collect();

    let mut theta = Vec::with_capacity(cfg.patients);
    let mut patients = Vec::with_capacity(cfg.patients);
    let mut labs = Vec::with_capacity(cfg.patients);
    for (t, rec, truths) in drawn {
        theta.push(t);
        patients.push(rec);
        labs.push(truths);
    }
    let corpus = Corpus {
        schema,
        patient_ids: (1..=cfg.patients as i64).collect(),
        patients,
    };
    Ok((
        corpus,
        GroundTruth {
            theta,
            phi,
            eta,
            psi,
            labs,
        },
    ))
}

/// Every untaken test with its hidden result: the imputation target set.
pub fn masked_targets(truth: &GroundTruth) -> Vec<MaskedTarget> {
    truth
        .labs
        .iter()
        .enumerate()
        .flat_map(|(j, row)| {
            row.iter().enumerate().filter(|(_, t)| !t.observed).map(move |(l, t)| MaskedTarget {
                patient: j,
                lab: l,
                value: t.value,
            })
        })
        .collect()
}

/// A seeded subsample (keeping `fraction` of them) of the masked targets.
pub fn masked_eval_split(truth: &GroundTruth, fraction: f64, seed: u64) -> Vec<MaskedTarget> {
    let all = masked_targets(truth);
    if fraction >= 1.0 {
        return all;
    }
    let mut rng = rng::stream(seed, "masked-split", 0);
    all.into_iter().filter(|_| rng.random::<f64>() < fraction).collect()
}

/// Writes every lab row including hidden ones, with a trailing observed flag:
/// `patient_id type_id lab_id value count observed`.
pub fn write_truth_sidecar<W: Write>(corpus: &Corpus, truth: &GroundTruth, mut out: W) -> std::io::Result<()> {
    let Some(lab_type) = corpus.schema.lab_type_id() else {
        return Ok(());
    };
    for (j, rec) in corpus.patients.iter().enumerate() {
        let pid = corpus.patient_ids[j];
        for (l, t) in truth.labs[j].iter().enumerate() {
            if t.observed {
                let obs = rec.observed.iter().find(|o| o.lab == l).expect("observed lab present");
                for &(v, c) in &obs.values {
                    writeln!(out, "{pid} {lab_type} {} {} {c} 1", l + 1, v + 1)?;
                }
            } else {
                writeln!(out, "{pid} {lab_type} {} {} 1 0", l + 1, t.value + 1)?;
            }
        }
    }
    Ok(())
}

/// Reads the hidden rows of a truth sidecar back as targets aligned to `corpus`.
pub fn read_truth_sidecar(path: &Path, corpus: &Corpus) -> Result<Vec<MaskedTarget>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let index: std::collections::HashMap<i64, usize> =
        corpus.patient_ids.iter().enumerate().map(|(j, &p)| (p, j)).collect();
    let v = corpus.schema.lab_value_counts();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<i64> = line
            .split_whitespace()
            .map(|s| s.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if f.len() != 6 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 6 fields, found {}", f.len()),
            });
        }
        if f[5] != 0 {
            continue;
        }
        let Some(&j) = index.get(&f[0]) else { continue };
        let (l, val) = (f[2] - 1, f[3] - 1);
        if l < 0 || l as usize >= v.len() || val < 0 || val as usize >= v[l as usize] {
            return Err(Error::Validation(format!("line {}: lab or value out of range", i + 1)));
        }
        out.push(MaskedTarget {
            patient: j,
            lab: l as usize,
            value: val as usize,
        });
    }
    Ok(out)
}
