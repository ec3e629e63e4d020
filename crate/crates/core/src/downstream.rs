//! Outcome prediction from inferred mixtures: L1-regularized regression,
//! ROC/PR scoring and coefficient reports.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PatientRecord};
use crate::cvb::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::estimates::{infer_mixtures, point_estimates, top_features, TopicEstimates, TopicReport, DEFAULT_INFER_SWEEPS};
use crate::eval::make_folds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    Logistic,
    /// Mean `½ (y − η)²` on 0/1 labels.
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Model {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub loss: Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: f64,
    /// Coordinate-descent sweeps.
    pub max_iters: usize,
    /// Converged when no coordinate moves by more than this in a sweep.
    pub tol: f64,
    pub loss: Loss,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 0.0,
            max_iters: 1000,
            tol: 1e-8,
            loss: Loss::Logistic,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn check_data(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!("{} feature rows but {} labels", x.len(), y.len())));
    }
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Validation("labels contain a single class".into()));
    }
    let k = x[0].len();
    if x.iter().any(|r| r.len() != k) {
        return Err(Error::Validation("feature rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature value".into()));
    }
    Ok(k)
}

fn mean_loss(loss: Loss, eta: &[f64], y: &[bool]) -> f64 {
    let n = eta.len() as f64;
    match loss {
        Loss::Logistic => eta.iter().zip(y).map(|(&e, &t)| softplus(e) - if t { e } else { 0.0 }).sum::<f64>() / n,
        Loss::Squared => {
            eta.iter()
                .zip(y)
                .map(|(&e, &t)| 0.5 * (e - t as u8 as f64).powi(2))
                .sum::<f64>()
                / n
        }
    }
}

/// Mean loss plus `λ Σ|w|` (intercept unpenalized).
pub fn objective(x: &[Vec<f64>], y: &[bool], model: &L1Model) -> f64 {
    let eta: Vec<f64> = x.iter().map(|r| linear(model, r)).collect();
    mean_loss(model.loss, &eta, y) + model.lambda * model.weights.iter().map(|w| w.abs()).sum::<f64>()
}

fn linear(model: &L1Model, row: &[f64]) -> f64 {
    model.intercept + model.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
}

/// Residual `∂loss/∂η` and curvature `∂²loss/∂η²` at one point.
fn residual(loss: Loss, eta: f64, y: bool) -> (f64, f64) {
    let t = y as u8 as f64;
    match loss {
        Loss::Logistic => {
            let p = sigmoid(eta);
            (p - t, p * (1.0 - p))
        }
        Loss::Squared => (eta - t, 1.0),
    }
}

/// Largest curvature of the loss in η, used for the majorizing step.
fn curvature_bound(loss: Loss) -> f64 {
    match loss {
        Loss::Logistic => 0.25,
        Loss::Squared => 1.0,
    }
}

/// The smallest λ at which every weight is zero.
/// At zero weights with the optimal intercept, both losses have residual
/// `base rate − y`, so the bound is the same for either.
pub fn lambda_max(x: &[Vec<f64>], y: &[bool]) -> Result<f64> {
    let k = check_data(x, y)?;
    let n = y.len() as f64;
    let base = y.iter().filter(|&&b| b).count() as f64 / n;
    Ok((0..k)
        .map(|j| (x.iter().zip(y).map(|(row, &t)| (base - t as u8 as f64) * row[j]).sum::<f64>() / n).abs())
        .fold(0.0, f64::max))
}

/// Fits weights and intercept by cyclic coordinate descent. Each coordinate
/// takes a proximal Newton step; if that fails to lower the objective, it
/// takes the step of a quadratic upper bound instead, which always does.
pub fn fit_l1(x: &[Vec<f64>], y: &[bool], opts: &FitOptions) -> Result<L1Model> {
    fit_l1_from(x, y, opts, None)
}

fn fit_l1_from(x: &[Vec<f64>], y: &[bool], opts: &FitOptions, warm: Option<&L1Model>) -> Result<L1Model> {
    let k = check_data(x, y)?;
    if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
        return Err(Error::Validation(format!("regularization must be finite and >= 0, got {}", opts.lambda)));
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&b| b).count() as f64;
    let null_intercept = match opts.loss {
        Loss::Logistic => (pos / (n - pos)).ln(),
        Loss::Squared => pos / n,
    };
    let mut model = match warm {
        Some(m) if m.weights.len() == k => L1Model {
            lambda: opts.lambda,
            loss: opts.loss,
            ..m.clone()
        },
        _ => L1Model {
            weights: vec![0.0; k],
            intercept: null_intercept,
            lambda: opts.lambda,
            loss: opts.loss,
        },
    };
    if opts.lambda > 0.0 && opts.lambda >= lambda_max(x, y)? {
        model.weights.iter_mut().for_each(|w| *w = 0.0);
        model.intercept = null_intercept;
        return Ok(model);
    }
    let mut eta: Vec<f64> = x.iter().map(|r| linear(&model, r)).collect();
    let bound = curvature_bound(opts.loss);
    let sq_mean: Vec<f64> = (0..k).map(|j| x.iter().map(|r| r[j] * r[j]).sum::<f64>() / n).collect();

    // Objective restricted to coordinate j (None = intercept) at value `v`.
    let coord_obj = |eta: &[f64], j: Option<usize>, cur: f64, v: f64| -> f64 {
        let d = v - cur;
        let shifted: f64 = match j {
            Some(j) => eta
                .iter()
                .zip(x)
                .zip(y)
                .map(|((&e, r), &t)| point_loss(opts.loss, e + d * r[j], t))
                .sum::<f64>(),
            None => eta.iter().zip(y).map(|(&e, &t)| point_loss(opts.loss, e + d, t)).sum::<f64>(),
        };
        shifted / n + if j.is_some() { opts.lambda * v.abs() } else { 0.0 }
    };

    for _ in 0..opts.max_iters {
        let mut max_change: f64 = 0.0;
        for j in std::iter::once(None).chain((0..k).map(Some)) {
            let (mut g, mut h) = (0.0, 0.0);
            for i in 0..x.len() {
                let xi = j.map_or(1.0, |j| x[i][j]);
                if xi == 0.0 {
                    continue;
                }
                let (r, c) = residual(opts.loss, eta[i], y[i]);
                g += r * xi;
                h += c * xi * xi;
            }
            g /= n;
            h /= n;
            let cur = j.map_or(model.intercept, |j| model.weights[j]);
            let penalty = if j.is_some() { opts.lambda } else { 0.0 };
            let xsq = j.map_or(1.0, |j| sq_mean[j]);
            if xsq == 0.0 {
                continue;
            }
            let step = |curv: f64| soft_threshold(cur - g / curv, penalty / curv);
            let before = coord_obj(&eta, j, cur, cur);
            let mut next = if h > 1e-12 { step(h) } else { cur };
            if next == cur || coord_obj(&eta, j, cur, next) > before {
                next = step(bound * xsq);
                if coord_obj(&eta, j, cur, next) > before {
                    next = cur;
                }
            }
            let d = next - cur;
            if d != 0.0 {
                match j {
                    Some(j) => {
                        model.weights[j] = next;
                        eta.iter_mut().zip(x).for_each(|(e, r)| *e += d * r[j]);
                    }
                    None => {
                        model.intercept = next;
                        eta.iter_mut().for_each(|e| *e += d);
                    }
                }
            }
            max_change = max_change.max(d.abs());
        }
        let obj = mean_loss(opts.loss, &eta, y);
        if !obj.is_finite() {
            return Err(Error::Numerical(format!("loss became {obj}")));
        }
        if max_change < opts.tol {
            break;
        }
    }
    Ok(model)
}

fn point_loss(loss: Loss, eta: f64, y: bool) -> f64 {
    match loss {
        Loss::Logistic => softplus(eta) - if y { eta } else { 0.0 },
        Loss::Squared => 0.5 * (eta - y as u8 as f64).powi(2),
    }
}

/// Logistic risk `σ(b + w·θ)` (the raw linear score for the squared loss).
pub fn predict_risk(model: &L1Model, theta: &[f64]) -> Result<f64> {
    if theta.len() != model.weights.len() {
        return Err(Error::Validation(format!(
            "model has {} weights but the embedding has {} entries",
            model.weights.len(),
            theta.len()
        )));
    }
    let eta = linear(model, theta);
    Ok(match model.loss {
        Loss::Logistic => sigmoid(eta),
        Loss::Squared => eta,
    })
}

/// `path_len` values from `λ_max` down to `λ_max · ratio`, log-spaced.
pub fn lambda_path(lmax: f64, path_len: usize, ratio: f64) -> Vec<f64> {
    if path_len <= 1 || lmax <= 0.0 {
        return vec![lmax.max(0.0)];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..path_len)
        .map(|i| (hi + (lo - hi) * i as f64 / (path_len - 1) as f64).exp())
        .collect()
}

/// Fits along a path with warm starts, from the largest λ down.
pub fn fit_path(x: &[Vec<f64>], y: &[bool], lambdas: &[f64], base: &FitOptions) -> Result<Vec<L1Model>> {
    let mut out: Vec<L1Model> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let m = fit_l1_from(x, y, &FitOptions { lambda, ..*base }, out.last())?;
        out.push(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaChoice {
    Fixed(f64),
    /// Inner cross-validation over a log path from `λ_max` to `λ_max·1e-3`.
    NestedCv { path_len: usize, folds: usize },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::NestedCv { path_len: 20, folds: 5 }
    }
}

/// Picks λ by mean held-out loss over stratified inner folds.
pub fn select_lambda(x: &[Vec<f64>], y: &[bool], path_len: usize, folds: usize, seed: u64, base: &FitOptions) -> Result<f64> {
    let lambdas = lambda_path(lambda_max(x, y)?, path_len, 1e-3);
    let parts = make_folds(y.len(), folds.min(y.len()), seed, Some(y))?;
    let mut total = vec![0.0; lambdas.len()];
    for held in &parts {
        let mut in_held = vec![false; y.len()];
        held.iter().for_each(|&i| in_held[i] = true);
        let (tx, ty): (Vec<Vec<f64>>, Vec<bool>) = (0..y.len()).filter(|&i| !in_held[i]).map(|i| (x[i].clone(), y[i])).unzip();
        let path = fit_path(&tx, &ty, &lambdas, base)?;
        for (t, m) in total.iter_mut().zip(&path) {
            let eta: Vec<f64> = held.iter().map(|&i| linear(m, &x[i])).collect();
            let hy: Vec<bool> = held.iter().map(|&i| y[i]).collect();
            *t += mean_loss(base.loss, &eta, &hy) * held.len() as f64;
        }
    }
    let best = total
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(lambdas[best])
}

/// Fits with a fixed λ or one chosen by nested cross-validation.
pub fn fit_with_choice(x: &[Vec<f64>], y: &[bool], choice: LambdaChoice, seed: u64, base: &FitOptions) -> Result<L1Model> {
    let lambda = match choice {
        LambdaChoice::Fixed(l) => l,
        LambdaChoice::NestedCv { path_len, folds } => select_lambda(x, y, path_len, folds, seed, base)?,
    };
    fit_l1(x, y, &FitOptions { lambda, ..*base })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPr {
    pub auroc: f64,
    pub auprc: f64,
    /// `(fpr, tpr)` from (0,0) to (1,1), one point per distinct score.
    pub roc: Vec<(f64, f64)>,
    /// `(recall, precision)`, one point per distinct score.
    pub pr: Vec<(f64, f64)>,
}

/// AUROC by Mann–Whitney counting (ties earn half credit) and AUPRC as
/// step-interpolated average precision.
pub fn roc_pr_metrics(scores: &[f64], labels: &[bool]) -> Result<RocPr> {
    if scores.len() != labels.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&b| b).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation("labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut roc = vec![(0.0, 0.0)];
    let mut pr = Vec::new();
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    // Concordant pairs: for each tie group, negatives below it count fully
    // and negatives inside it count half.
    let mut concordant = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        let neg_below = neg - fp - gn;
        concordant += gp as f64 * (neg_below as f64 + 0.5 * gn as f64);
        tp += gp;
        fp += gn;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        roc.push((fp as f64 / neg as f64, recall));
        pr.push((recall, precision));
    }
    Ok(RocPr {
        auroc: concordant / (pos as f64 * neg as f64),
        auprc,
        roc,
        pr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityPlan {
    pub folds: usize,
    pub seed: u64,
    pub infer_sweeps: usize,
    pub lambda: LambdaChoice,
    pub fit: FitOptions,
}

impl Default for MortalityPlan {
    fn default() -> Self {
        MortalityPlan {
            folds: 5,
            seed: 0,
            infer_sweeps: DEFAULT_INFER_SWEEPS,
            lambda: LambdaChoice::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityResult {
    /// Out-of-fold score for every patient, in corpus order.
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub metrics: RocPr,
    pub fold_models: Vec<L1Model>,
}

fn check_labels(n: usize, labels: &[bool]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Validation(format!("{n} patients but {} labels", labels.len())));
    }
    Ok(())
}

fn pooled(n: usize, labels: &[bool], per_fold: Vec<(Vec<usize>, Vec<f64>, L1Model)>) -> Result<MortalityResult> {
    let mut scores = vec![f64::NAN; n];
    let mut fold_models = Vec::with_capacity(per_fold.len());
    for (held, s, m) in per_fold {
        held.iter().zip(s).for_each(|(&i, v)| scores[i] = v);
        fold_models.push(m);
    }
    let metrics = roc_pr_metrics(&scores, labels)?;
    Ok(MortalityResult {
        scores,
        labels: labels.to_vec(),
        metrics,
        fold_models,
    })
}

fn split_rows<T: Clone>(rows: &[T], held: &[usize]) -> (Vec<T>, Vec<T>) {
    let mut in_held = vec![false; rows.len()];
    held.iter().for_each(|&i| in_held[i] = true);
    let train = (0..rows.len()).filter(|&i| !in_held[i]).map(|i| rows[i].clone()).collect();
    let test = held.iter().map(|&i| rows[i].clone()).collect();
    (train, test)
}

/// Full pipeline per stratified fold: unsupervised topic training on the
/// training patients, mixtures inferred for both sides, an L1 model fitted on
/// the training mixtures, and held-out scores pooled across folds.
pub fn mortality_cv(corpus: &Corpus, labels: &[bool], cfg: &TrainConfig, plan: &MortalityPlan) -> Result<MortalityResult> {
    check_labels(corpus.num_patients(), labels)?;
    let folds = make_folds(labels.len(), plan.folds, plan.seed, Some(labels))?;
    let per_fold = folds
        .par_iter()
        .enumerate()
        .map(|(f, held)| {
            let (train_idx, _) = split_rows(&(0..labels.len()).collect::<Vec<_>>(), held);
            let train_set = corpus.subset(&train_idx);
            let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
            let model = train(&train_set, cfg)?;
            let est = point_estimates(&model);
            let x: Vec<Vec<f64>> = infer_mixtures(&train_set.patients, &est, plan.infer_sweeps)
                .into_iter()
                .map(|m| m.theta)
                .collect();
            let l1 = fit_with_choice(&x, &train_labels, plan.lambda, plan.seed ^ f as u64, &plan.fit)
                .map_err(|e| Error::Validation(format!("fold {f}: {e}")))?;
            let held_records: Vec<PatientRecord> = held.iter().map(|&i| corpus.patients[i].clone()).collect();
            let scores = infer_mixtures(&held_records, &est, plan.infer_sweeps)
                .iter()
                .map(|m| predict_risk(&l1, &m.theta))
                .collect::<Result<Vec<_>>>()?;
            Ok((held.clone(), scores, l1))
        })
        .collect::<Result<Vec<_>>>()?;
    pooled(labels.len(), labels, per_fold)
}

/// Cross-validated L1 prediction on precomputed embeddings.
pub fn embedding_cv(x: &[Vec<f64>], labels: &[bool], plan: &MortalityPlan) -> Result<MortalityResult> {
    check_labels(x.len(), labels)?;
    let folds = make_folds(labels.len(), plan.folds, plan.seed, Some(labels))?;
    let per_fold = folds
        .par_iter()
        .enumerate()
        .map(|(f, held)| {
            let (tx, hx) = split_rows(x, held);
            let (ty, _) = split_rows(labels, held);
            let l1 = fit_with_choice(&tx, &ty, plan.lambda, plan.seed ^ f as u64, &plan.fit)
                .map_err(|e| Error::Validation(format!("fold {f}: {e}")))?;
            let scores = hx.iter().map(|t| predict_risk(&l1, t)).collect::<Result<Vec<_>>>()?;
            Ok((held.clone(), scores, l1))
        })
        .collect::<Result<Vec<_>>>()?;
    pooled(labels.len(), labels, per_fold)
}

/// Scores later outcomes from mixtures inferred on earlier records.
pub fn prospective_eval(
    est: &TopicEstimates,
    model: &L1Model,
    early: &[PatientRecord],
    labels: &[bool],
    sweeps: usize,
) -> Result<(Vec<f64>, RocPr)> {
    check_labels(early.len(), labels)?;
    let scores = infer_mixtures(early, est, sweeps)
        .iter()
        .map(|m| predict_risk(model, &m.theta))
        .collect::<Result<Vec<_>>>()?;
    let metrics = roc_pr_metrics(&scores, labels)?;
    Ok((scores, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTopic {
    /// 0-based topic index.
    pub topic: usize,
    pub weight: f64,
    pub report: TopicReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveTopics {
    /// Most positive coefficients first.
    pub positive: Vec<RankedTopic>,
    /// Most negative coefficients first.
    pub negative: Vec<RankedTopic>,
}

/// Up to `n` topics with the largest positive and the most negative weights.
/// Zero-weight topics are never listed.
pub fn top_predictive_topics(model: &L1Model, est: &TopicEstimates, n: usize, features: usize, value: usize) -> PredictiveTopics {
    let ranked = |positive: bool| {
        let mut idx: Vec<usize> = (0..model.weights.len())
            .filter(|&k| if positive { model.weights[k] > 0.0 } else { model.weights[k] < 0.0 })
            .collect();
        idx.sort_by(|&a, &b| {
            let (wa, wb) = (model.weights[a], model.weights[b]);
            if positive {
                wb.total_cmp(&wa)
            } else {
                wa.total_cmp(&wb)
            }
            .then(a.cmp(&b))
        });
        idx.into_iter()
            .take(n)
            .map(|k| RankedTopic {
                topic: k,
                weight: model.weights[k],
                report: top_features(est, k, features, value),
            })
            .collect()
    };
    PredictiveTopics {
        positive: ranked(true),
        negative: ranked(false),
    }
}

/// `patient_id,score,label`.
pub fn write_predictions_csv<W: Write>(ids: &[i64], scores: &[f64], labels: &[bool], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "score", "label"])?;
    for ((id, s), l) in ids.iter().zip(scores).zip(labels) {
        w.write_record([id.to_string(), s.to_string(), (*l as u8).to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Two-column curve file, e.g. `fpr,tpr` or `recall,precision`.
pub fn write_curve_csv<W: Write>(header: [&str; 2], points: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for (a, b) in points {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `topic,weight` with 1-based topics.
pub fn write_coefficients_csv<W: Write>(model: &L1Model, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["topic", "weight"])?;
    for (k, wt) in model.weights.iter().enumerate() {
        w.write_record([(k + 1).to_string(), wt.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
