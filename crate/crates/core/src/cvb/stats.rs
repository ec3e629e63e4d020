use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Variant;
use crate::corpus::{Corpus, PatientRecord, Schema};
use crate::rng;

/// Expected feature-topic counts `ñ^(t)_{w.k}` of one regular type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    /// Row-major `W_t × K`.
    pub counts: Vec<f64>,
    /// `Σ_w ñ^(t)_{w.k}`, length K.
    pub totals: Vec<f64>,
}

/// Expected lab statistics of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabStats {
    /// `m̃_{l.kv}`, row-major `K × V_l`.
    pub values: Vec<f64>,
    /// `Σ_v m̃_{l.kv}`, length K.
    pub value_totals: Vec<f64>,
    /// `p̃_lk`: expected observed-test mass.
    pub observed: Vec<f64>,
    /// `q̃_lk`: expected missing-test mass.
    pub missing: Vec<f64>,
}

/// Sufficient statistics shared across patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub topics: usize,
    pub types: Vec<TypeStats>,
    pub labs: Vec<LabStats>,
}

impl GlobalStats {
    pub fn zeros(schema: &Schema, topics: usize) -> Self {
        GlobalStats {
            topics,
            types: schema
                .regular_feature_counts()
                .iter()
                .map(|&w| TypeStats {
                    counts: vec![0.0; w * topics],
                    totals: vec![0.0; topics],
                })
                .collect(),
            labs: schema
                .lab_value_counts()
                .iter()
                .map(|&v| LabStats {
                    values: vec![0.0; v * topics],
                    value_totals: vec![0.0; topics],
                    observed: vec![0.0; topics],
                    missing: vec![0.0; topics],
                })
                .collect(),
        }
    }

    fn zip_apply(&mut self, other: &GlobalStats, f: impl Fn(&mut f64, f64)) {
        let zip = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, &y)| f(x, y));
        for (a, b) in self.types.iter_mut().zip(&other.types) {
            zip(&mut a.counts, &b.counts);
            zip(&mut a.totals, &b.totals);
        }
        for (a, b) in self.labs.iter_mut().zip(&other.labs) {
            zip(&mut a.values, &b.values);
            zip(&mut a.value_totals, &b.value_totals);
            zip(&mut a.observed, &b.observed);
            zip(&mut a.missing, &b.missing);
        }
    }

    pub fn add(&mut self, other: &GlobalStats) {
        self.zip_apply(other, |x, y| *x += y);
    }

    pub fn sub(&mut self, other: &GlobalStats) {
        self.zip_apply(other, |x, y| *x -= y);
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.types
            .iter()
            .flat_map(|t| t.counts.iter().chain(&t.totals))
            .chain(
                self.labs
                    .iter()
                    .flat_map(|l| l.values.iter().chain(&l.value_totals).chain(&l.observed).chain(&l.missing)),
            )
            .copied()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &GlobalStats) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Adds `sign ×` one patient's expected contribution.
    pub(crate) fn apply_patient(&mut self, rec: &PatientRecord, post: &PatientPosterior, variant: Variant, sign: f64) {
        let k = self.topics;
        if variant.mixview {
            for (i, tok) in rec.tokens.iter().enumerate() {
                let w = sign * tok.count as f64;
                self.add_token(tok.ty, tok.feature, &post.gamma[i * k..(i + 1) * k], w);
            }
        }
        for (o, lab) in rec.observed.iter().enumerate() {
            self.add_observed(lab.lab, &lab.values, &post.lambda[o * k..(o + 1) * k], sign, variant.nmar);
        }
        if variant.nmar {
            let mut off = 0;
            for &l in &rec.missing {
                let v = self.labs[l].values.len() / k;
                self.add_missing(l, &post.pi[off..off + k * v], sign);
                off += k * v;
            }
        }
    }

    #[inline]
    pub(crate) fn add_token(&mut self, ty: usize, feature: usize, gamma: &[f64], weight: f64) {
        let k = self.topics;
        let ts = &mut self.types[ty];
        let row = &mut ts.counts[feature * k..(feature + 1) * k];
        for kk in 0..k {
            let d = weight * gamma[kk];
            row[kk] += d;
            ts.totals[kk] += d;
        }
    }

    #[inline]
    pub(crate) fn add_observed(&mut self, lab: usize, values: &[(usize, u32)], lambda: &[f64], sign: f64, nmar: bool) {
        let k = self.topics;
        let ls = &mut self.labs[lab];
        let v_count = ls.values.len() / k;
        let total: f64 = values.iter().map(|&(_, c)| c as f64).sum();
        for kk in 0..k {
            for &(v, c) in values {
                ls.values[kk * v_count + v] += sign * c as f64 * lambda[kk];
            }
            let d = sign * total * lambda[kk];
            ls.value_totals[kk] += d;
            if nmar {
                ls.observed[kk] += d;
            }
        }
    }

    #[inline]
    pub(crate) fn add_missing(&mut self, lab: usize, pi: &[f64], sign: f64) {
        let k = self.topics;
        let ls = &mut self.labs[lab];
        let v_count = ls.values.len() / k;
        for kk in 0..k {
            let row = &pi[kk * v_count..(kk + 1) * v_count];
            let mass: f64 = row.iter().sum();
            for (v, &p) in row.iter().enumerate() {
                ls.values[kk * v_count + v] += sign * p;
            }
            ls.value_totals[kk] += sign * mass;
            ls.missing[kk] += sign * mass;
        }
    }
}

/// Variational responsibilities of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPosterior {
    /// `γ`, one K-row per distinct token entry (empty in the labs-only view).
    pub gamma: Vec<f64>,
    /// `λ`, one K-row per observed lab.
    pub lambda: Vec<f64>,
    /// `π`, one `K × V_l` block per missing lab (empty in the MAR variant).
    pub pi: Vec<f64>,
    /// `ñ_{.jk}`: regular-token topic load.
    pub n_jk: Vec<f64>,
    /// `m̃_{.jk}`: lab topic load.
    pub m_jk: Vec<f64>,
}

impl PatientPosterior {
    pub fn topics(&self) -> usize {
        self.n_jk.len()
    }

    /// `ñ_jk + m̃_jk` per topic.
    pub fn load(&self) -> Vec<f64> {
        self.n_jk.iter().zip(&self.m_jk).map(|(a, b)| a + b).collect()
    }

    /// Recomputes `n_jk` and `m_jk` from the responsibilities.
    pub(crate) fn recompute_loads(&mut self, rec: &PatientRecord, value_counts: &[usize], variant: Variant) {
        let k = self.topics();
        self.n_jk.iter_mut().for_each(|x| *x = 0.0);
        self.m_jk.iter_mut().for_each(|x| *x = 0.0);
        if variant.mixview {
            for (i, tok) in rec.tokens.iter().enumerate() {
                for kk in 0..k {
                    self.n_jk[kk] += tok.count as f64 * self.gamma[i * k + kk];
                }
            }
        }
        for (o, lab) in rec.observed.iter().enumerate() {
            let total = lab.total() as f64;
            for kk in 0..k {
                self.m_jk[kk] += total * self.lambda[o * k + kk];
            }
        }
        if variant.nmar {
            let mut off = 0;
            for &l in &rec.missing {
                let v = value_counts[l];
                for kk in 0..k {
                    self.m_jk[kk] += self.pi[off + kk * v..off + (kk + 1) * v].iter().sum::<f64>();
                }
                off += k * v;
            }
        }
    }
}

fn noisy_simplex<R: Rng>(rng: &mut R, out: &mut [f64]) {
    let n = out.len() as f64;
    let amp = 0.1 / n;
    for x in out.iter_mut() {
        *x = 1.0 / n + amp * rng.random::<f64>();
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
}

/// Seeded initial responsibilities for one patient: uniform plus noise of
/// amplitude `0.1 / size`, renormalized.
pub(crate) fn init_patient(
    rec: &PatientRecord,
    value_counts: &[usize],
    topics: usize,
    variant: Variant,
    seed: u64,
    index: u64,
) -> PatientPosterior {
    let mut rng = rng::stream(seed, "cvb-init", index);
    let k = topics;
    let mut gamma = vec![0.0; if variant.mixview { rec.tokens.len() * k } else { 0 }];
    for row in gamma.chunks_mut(k) {
        noisy_simplex(&mut rng, row);
    }
    let mut lambda = vec![0.0; rec.observed.len() * k];
    for row in lambda.chunks_mut(k) {
        noisy_simplex(&mut rng, row);
    }
    let mut pi = Vec::new();
    if variant.nmar {
        for &l in &rec.missing {
            let start = pi.len();
            pi.resize(start + k * value_counts[l], 0.0);
            noisy_simplex(&mut rng, &mut pi[start..]);
        }
    }
    let mut post = PatientPosterior {
        gamma,
        lambda,
        pi,
        n_jk: vec![0.0; k],
        m_jk: vec![0.0; k],
    };
    post.recompute_loads(rec, value_counts, variant);
    post
}

/// Aggregates global statistics from scratch.
pub fn aggregate(corpus: &Corpus, posteriors: &[PatientPosterior], topics: usize, variant: Variant) -> GlobalStats {
    let mut stats = GlobalStats::zeros(&corpus.schema, topics);
    for (rec, post) in corpus.patients.iter().zip(posteriors) {
        stats.apply_patient(rec, post, variant, 1.0);
    }
    stats
}
