//! Point estimates of the topics, mixture inference for new patients, and
//! topic summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{PatientRecord, Schema};
use crate::cvb::{Hyperparams, TrainedModel, Variant, LOG_FLOOR};

/// Default number of sweeps for held-out mixture inference.
pub const DEFAULT_INFER_SWEEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEstimates {
    pub schema: Schema,
    pub variant: Variant,
    pub topics: usize,
    /// `φ̂` per regular type, row-major `W_t × K`; each topic column sums to 1.
    pub phi: Vec<Vec<f64>>,
    /// `η̂` per lab, row-major `K × V_l`; each topic row sums to 1.
    pub eta: Vec<Vec<f64>>,
    /// `ψ̂` per lab, length K.
    pub psi: Vec<Vec<f64>>,
    pub hyper: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMixture {
    pub theta: Vec<f64>,
}

impl TopicEstimates {
    #[inline]
    pub fn phi_at(&self, ty: usize, feature: usize, topic: usize) -> f64 {
        self.phi[ty][feature * self.topics + topic]
    }

    #[inline]
    pub fn eta_at(&self, lab: usize, topic: usize, value: usize) -> f64 {
        let v = self.eta[lab].len() / self.topics;
        self.eta[lab][topic * v + value]
    }

    pub fn value_count(&self, lab: usize) -> usize {
        self.eta[lab].len() / self.topics
    }

    pub fn prior_mean(&self) -> Vec<f64> {
        let s: f64 = self.hyper.alpha.iter().sum();
        self.hyper.alpha.iter().map(|a| a / s).collect()
    }
}

/// Normalized posterior-mean estimates from a model's expected counts.
pub fn point_estimates(model: &TrainedModel) -> TopicEstimates {
    let k = model.topics();
    let hp = &model.hyper;
    let phi = model
        .stats
        .types
        .iter()
        .enumerate()
        .map(|(t, ts)| {
            let beta = &hp.beta[t];
            let beta_sum: f64 = beta.iter().sum();
            let mut out = vec![0.0; ts.counts.len()];
            for (w, &bw) in beta.iter().enumerate() {
                for kk in 0..k {
                    out[w * k + kk] = (bw + ts.counts[w * k + kk]) / (beta_sum + ts.totals[kk]);
                }
            }
            out
        })
        .collect();
    let mut eta = Vec::with_capacity(model.stats.labs.len());
    let mut psi = Vec::with_capacity(model.stats.labs.len());
    for (l, ls) in model.stats.labs.iter().enumerate() {
        let zeta = &hp.zeta[l];
        let zeta_sum: f64 = zeta.iter().sum();
        let v = zeta.len();
        let mut e = vec![0.0; k * v];
        for kk in 0..k {
            for (vv, &z) in zeta.iter().enumerate() {
                e[kk * v + vv] = (z + ls.values[kk * v + vv]) / (zeta_sum + ls.value_totals[kk]);
            }
        }
        eta.push(e);
        let (a, b) = (hp.a[l], hp.b[l]);
        psi.push(
            (0..k)
                .map(|kk| (a + ls.observed[kk]) / (a + ls.observed[kk] + b + ls.missing[kk]))
                .collect(),
        );
    }
    TopicEstimates {
        schema: model.schema.clone(),
        variant: model.variant(),
        topics: k,
        phi,
        eta,
        psi,
        hyper: hp.clone(),
    }
}

fn normalize(out: &mut [f64]) {
    let s: f64 = out.iter().sum();
    if s > 0.0 && s.is_finite() {
        out.iter_mut().for_each(|x| *x /= s);
    } else {
        let n = out.len() as f64;
        out.iter_mut().for_each(|x| *x = 1.0 / n);
    }
}

/// Infers one patient's topic mixture with the topics held fixed, running
/// `sweeps` CVB0 passes over the patient's own responsibilities.
///
/// Under the NMAR variant the record's missing labs contribute joint
/// topic × value responsibilities, so untaken tests inform the mixture.
pub fn infer_mixture(record: &PatientRecord, est: &TopicEstimates, sweeps: usize) -> PatientMixture {
    let k = est.topics;
    let alpha = &est.hyper.alpha;
    let variant = est.variant;
    let tokens: &[_] = if variant.mixview { &record.tokens } else { &[] };
    let missing: &[usize] = if variant.nmar { &record.missing } else { &[] };

    let uniform = 1.0 / k as f64;
    let mut gamma = vec![uniform; tokens.len() * k];
    let mut lambda = vec![uniform; record.observed.len() * k];
    let mut n_jk = vec![0.0; k];
    let mut m_jk = vec![0.0; k];
    for t in tokens {
        n_jk.iter_mut().for_each(|x| *x += t.count as f64 * uniform);
    }
    for o in &record.observed {
        m_jk.iter_mut().for_each(|x| *x += o.total() as f64 * uniform);
    }
    // Missing labs keep only their topic marginal; the value dimension sums out
    // because η̂ rows are normalized.
    let mut pi_topic = vec![uniform; missing.len() * k];
    m_jk.iter_mut().for_each(|x| *x += missing.len() as f64 * uniform);

    // Per-lab log likelihood of observed results given each topic.
    let lab_terms: Vec<Vec<f64>> = record
        .observed
        .iter()
        .map(|o| {
            (0..k)
                .map(|kk| {
                    let mut s: f64 = o
                        .values
                        .iter()
                        .map(|&(v, c)| c as f64 * est.eta_at(o.lab, kk, v).max(LOG_FLOOR).ln())
                        .sum();
                    if variant.nmar {
                        s += est.psi[o.lab][kk].max(LOG_FLOOR).ln();
                    }
                    s
                })
                .collect()
        })
        .collect();

    for _ in 0..sweeps {
        for (i, t) in tokens.iter().enumerate() {
            let c = t.count as f64;
            let row = &mut gamma[i * k..(i + 1) * k];
            for kk in 0..k {
                n_jk[kk] -= c * row[kk];
                row[kk] = (alpha[kk] + n_jk[kk] + m_jk[kk]) * est.phi_at(t.ty, t.feature, kk);
            }
            normalize(row);
            for kk in 0..k {
                n_jk[kk] += c * row[kk];
            }
        }
        for (o, lab) in record.observed.iter().enumerate() {
            let c = lab.total() as f64;
            let row = &mut lambda[o * k..(o + 1) * k];
            for kk in 0..k {
                m_jk[kk] -= c * row[kk];
                row[kk] = (alpha[kk] + n_jk[kk] + m_jk[kk]).max(LOG_FLOOR).ln() + lab_terms[o][kk];
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - max).exp());
            normalize(row);
            for kk in 0..k {
                m_jk[kk] += c * row[kk];
            }
        }
        for (i, &l) in missing.iter().enumerate() {
            let row = &mut pi_topic[i * k..(i + 1) * k];
            for kk in 0..k {
                m_jk[kk] -= row[kk];
                row[kk] = (alpha[kk] + n_jk[kk] + m_jk[kk]) * (1.0 - est.psi[l][kk]);
            }
            normalize(row);
            for kk in 0..k {
                m_jk[kk] += row[kk];
            }
        }
    }

    let mut theta: Vec<f64> = (0..k).map(|kk| (alpha[kk] + n_jk[kk] + m_jk[kk]).max(0.0)).collect();
    normalize(&mut theta);
    PatientMixture { theta }
}

/// Infers mixtures of many patients in parallel.
pub fn infer_mixtures(records: &[PatientRecord], est: &TopicEstimates, sweeps: usize) -> Vec<PatientMixture> {
    records.par_iter().map(|r| infer_mixture(r, est, sweeps)).collect()
}

/// `ψ̂_lk η̂_lkv / Σ_l' ψ̂_l'k η̂_l'kv`, as an L × K matrix. Labs with fewer
/// than `value + 1` values score 0 and are left out of the normalization.
pub fn lab_topic_score(est: &TopicEstimates, value: usize) -> Vec<Vec<f64>> {
    let k = est.topics;
    let l_count = est.psi.len();
    let mut score = vec![vec![0.0; k]; l_count];
    for kk in 0..k {
        let mut total = 0.0;
        for l in 0..l_count {
            if value < est.value_count(l) {
                score[l][kk] = est.psi[l][kk] * est.eta_at(l, kk, value);
                total += score[l][kk];
            }
        }
        if total > 0.0 {
            for row in score.iter_mut() {
                row[kk] /= total;
            }
        }
    }
    score
}

/// Top entries of one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topic: usize,
    /// Per regular type: `(type_id, [(feature_id, φ̂)])`, best first.
    pub features: Vec<(u32, Vec<(u32, f64)>)>,
    /// `(lab_id, score)`, best first.
    pub labs: Vec<(u32, f64)>,
}

fn rank_desc(weights: impl Iterator<Item = (u32, f64)>, n: usize) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = weights.collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

/// Top-`n` features per regular type by `φ̂` and top-`n` labs by
/// [`lab_topic_score`] at `value`, for 0-based `topic`. Ties go to the lower id.
pub fn top_features(est: &TopicEstimates, topic: usize, n: usize, value: usize) -> TopicReport {
    let k = est.topics;
    let features = est
        .phi
        .iter()
        .enumerate()
        .map(|(t, phi)| {
            let w_count = phi.len() / k;
            let ranked = rank_desc((0..w_count).map(|w| (w as u32 + 1, phi[w * k + topic])), n);
            (est.schema.regular_type_id(t), ranked)
        })
        .collect();
    let scores = lab_topic_score(est, value);
    let labs = rank_desc(
        scores
            .iter()
            .enumerate()
            .filter(|(l, _)| value < est.value_count(*l))
            .map(|(l, row)| (l as u32 + 1, row[topic])),
        n,
    );
    TopicReport {
        topic,
        features,
        labs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabResult, Token};
    use crate::cvb::{GlobalStats, HyperInit, HyperPriors, TrainConfig};

    fn model(regular: &[usize], labs: &[usize], k: usize, init: HyperInit) -> TrainedModel {
        let schema = Schema::new(regular, labs).unwrap();
        let cfg = TrainConfig {
            topics: k,
            init,
            ..Default::default()
        };
        TrainedModel {
            hyper: Hyperparams::symmetric(&schema, k, &init, HyperPriors::default()),
            stats: GlobalStats::zeros(&schema, k),
            schema,
            config: cfg,
            patient_ids: vec![],
            posteriors: None,
            initial_loglik: 0.0,
            iterations: 0,
            trace: vec![],
        }
    }

    #[test]
    fn prior_only_estimates() {
        let init = HyperInit {
            a: 2.0,
            b: 6.0,
            ..Default::default()
        };
        let est = point_estimates(&model(&[4, 5], &[2, 3], 3, init));
        assert!(est.phi[0].iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(est.phi[1].iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert!(est.eta[0].iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert!(est.eta[1].iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(est.psi.iter().flatten().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn phi_direct_arithmetic() {
        let mut m = model(&[2], &[], 1, HyperInit { beta: 1.0, ..Default::default() });
        m.stats.types[0].counts = vec![10.0, 0.0];
        m.stats.types[0].totals = vec![10.0];
        let est = point_estimates(&m);
        assert!((est.phi[0][0] - 11.0 / 12.0).abs() < 1e-15);
        assert!((est.phi[0][1] - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn empty_record_gives_prior_mean() {
        let mut m = model(&[3], &[2], 3, HyperInit::default());
        m.hyper.alpha = vec![1.0, 2.0, 5.0];
        let est = point_estimates(&m);
        let mix = infer_mixture(&PatientRecord::default(), &est, 20);
        assert_eq!(mix.theta, vec![0.125, 0.25, 0.625]);
        let single = point_estimates(&model(&[3], &[2], 1, HyperInit::default()));
        let rec = PatientRecord {
            tokens: vec![Token { ty: 0, feature: 1, count: 4 }],
            observed: vec![],
            missing: vec![0],
        };
        assert_eq!(infer_mixture(&rec, &single, 5).theta, vec![1.0]);
    }

    #[test]
    fn dominant_feature_wins() {
        let mut m = model(&[3], &[], 3, HyperInit::default());
        // feature 2 is nearly exclusive to topic 0
        m.stats.types[0].counts = vec![0.0, 5.0, 5.0, 50.0, 0.0, 0.0, 0.0, 5.0, 5.0];
        m.stats.types[0].totals = vec![50.0, 10.0, 10.0];
        let est = point_estimates(&m);
        let rec = PatientRecord {
            tokens: vec![Token { ty: 0, feature: 1, count: 10 }],
            ..Default::default()
        };
        let theta = infer_mixture(&rec, &est, 20).theta;
        let best = (0..3).max_by(|&a, &b| theta[a].total_cmp(&theta[b])).unwrap();
        assert_eq!(best, 0);
        assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_labs_inform_mixture_only_under_nmar() {
        let mut m = model(&[2], &[2], 2, HyperInit::default());
        m.stats.labs[0].observed = vec![50.0, 0.0];
        m.stats.labs[0].missing = vec![0.0, 50.0];
        let est = point_estimates(&m);
        let rec = PatientRecord {
            missing: vec![0],
            ..Default::default()
        };
        let theta = infer_mixture(&rec, &est, 20).theta;
        assert!(theta[1] > theta[0]);
        let mut mar = est.clone();
        mar.variant.nmar = false;
        let theta = infer_mixture(&rec, &mar, 20).theta;
        assert!((theta[0] - theta[1]).abs() < 1e-15);
        let obs = PatientRecord {
            observed: vec![LabResult { lab: 0, values: vec![(1, 1)] }],
            ..Default::default()
        };
        let theta = infer_mixture(&obs, &est, 20).theta;
        assert!(theta[0] > theta[1]);
    }

    #[test]
    fn lab_scores() {
        let mut one = point_estimates(&model(&[1], &[2], 3, HyperInit::default()));
        one.psi[0] = vec![0.1, 0.5, 0.9];
        assert!(lab_topic_score(&one, 1)[0].iter().all(|&s| s == 1.0));

        let est = TopicEstimates {
            psi: vec![vec![0.6, 0.5], vec![0.2, 0.5]],
            eta: vec![vec![0.5; 4], vec![0.5; 4]],
            ..point_estimates(&model(&[1], &[2, 2], 2, HyperInit::default()))
        };
        let s = lab_topic_score(&est, 1);
        assert!((s[0][0] - 0.75).abs() < 1e-12 && (s[1][0] - 0.25).abs() < 1e-12);
        assert!((s[0][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn top_feature_ranking_and_ties() {
        let mut est = point_estimates(&model(&[3, 2], &[], 1, HyperInit::default()));
        est.phi[0] = vec![0.5, 0.3, 0.2];
        let r = top_features(&est, 0, 2, 1);
        assert_eq!(r.features[0].0, 1);
        assert_eq!(r.features[0].1.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2]);
        // equal weights: ascending id
        assert_eq!(r.features[1].1.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2]);
        let all = top_features(&est, 0, 10, 1);
        assert_eq!(all.features[0].1.len(), 3);
        let none = top_features(&est, 0, 0, 1);
        assert!(none.features.iter().all(|(_, f)| f.is_empty()) && none.labs.is_empty());
    }
}
