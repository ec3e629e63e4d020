//! Exact posterior marginals by enumerating every topic assignment of a tiny
//! corpus. The joint is built with sequential Pólya-urn predictive
//! probabilities, one unit of count at a time.

use std::io::Write;

use crate::corpus::Corpus;
use crate::cvb::{Hyperparams, Variant};
use crate::error::{Error, Result};

/// Largest joint assignment space the oracle will enumerate.
pub const ORACLE_SPACE_LIMIT: u64 = 10_000_000;

/// One latent variable of the enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleVar {
    /// One instance of token entry `entry` of `patient`; domain K.
    Token { patient: usize, entry: usize, instance: u32 },
    /// Topic of observed lab `index` (position in the record); domain K.
    Observed { patient: usize, index: usize },
    /// Topic and hidden value of missing lab `index`; domain `K × V`, encoded `k·V + v`.
    Missing { patient: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub log_marginal: f64,
    /// `[patient][entry][k]`, exact marginal of one instance of each token entry.
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// `[patient][observed lab][k]`.
    pub lambda: Vec<Vec<Vec<f64>>>,
    /// `[patient][missing lab][k·V + v]`.
    pub pi: Vec<Vec<Vec<f64>>>,
}

pub struct TinyOracle<'a> {
    corpus: &'a Corpus,
    hp: &'a Hyperparams,
    variant: Variant,
    topics: usize,
    vars: Vec<OracleVar>,
    domains: Vec<usize>,
}

struct Counts {
    load: Vec<Vec<f64>>,
    nw: Vec<Vec<f64>>,
    nk: Vec<Vec<f64>>,
    mv: Vec<Vec<f64>>,
    mk: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
}

impl Counts {
    fn clear(&mut self) {
        for v in [&mut self.load, &mut self.nw, &mut self.nk, &mut self.mv, &mut self.mk, &mut self.p, &mut self.q] {
            v.iter_mut().for_each(|row| row.fill(0.0));
        }
    }
}

impl<'a> TinyOracle<'a> {
    pub fn new(corpus: &'a Corpus, hp: &'a Hyperparams, variant: Variant) -> Result<Self> {
        let topics = hp.topics();
        let value_counts = corpus.schema.lab_value_counts();
        let mut vars = Vec::new();
        let mut domains = Vec::new();
        for (j, rec) in corpus.patients.iter().enumerate() {
            if variant.mixview {
                for (e, t) in rec.tokens.iter().enumerate() {
                    for i in 0..t.count {
                        vars.push(OracleVar::Token { patient: j, entry: e, instance: i });
                        domains.push(topics);
                    }
                }
            }
            for o in 0..rec.observed.len() {
                vars.push(OracleVar::Observed { patient: j, index: o });
                domains.push(topics);
            }
            if variant.nmar {
                for (m, &l) in rec.missing.iter().enumerate() {
                    vars.push(OracleVar::Missing { patient: j, index: m });
                    domains.push(topics * value_counts[l]);
                }
            }
        }
        let size: f64 = domains.iter().map(|&d| d as f64).product();
        if size > ORACLE_SPACE_LIMIT as f64 {
            return Err(Error::SpaceTooLarge {
                size,
                limit: ORACLE_SPACE_LIMIT as f64,
            });
        }
        Ok(TinyOracle {
            corpus,
            hp,
            variant,
            topics,
            vars,
            domains,
        })
    }

    pub fn vars(&self) -> &[OracleVar] {
        &self.vars
    }

    pub fn space_size(&self) -> u64 {
        self.domains.iter().map(|&d| d as u64).product()
    }

    fn counts(&self) -> Counts {
        let k = self.topics;
        let schema = &self.corpus.schema;
        let labs = schema.num_labs();
        Counts {
            load: vec![vec![0.0; k]; self.corpus.num_patients()],
            nw: schema.regular_feature_counts().iter().map(|&w| vec![0.0; w * k]).collect(),
            nk: vec![vec![0.0; k]; schema.num_regular_types()],
            mv: schema.lab_value_counts().iter().map(|&v| vec![0.0; v * k]).collect(),
            mk: vec![vec![0.0; k]; labs],
            p: vec![vec![0.0; k]; labs],
            q: vec![vec![0.0; k]; labs],
        }
    }

    /// Log joint of one full assignment (`assignment[i]` indexes `vars()[i]`'s domain).
    pub fn log_joint(&self, assignment: &[usize]) -> f64 {
        let mut c = self.counts();
        self.log_joint_with(assignment, &mut c)
    }

    fn log_joint_with(&self, assignment: &[usize], c: &mut Counts) -> f64 {
        c.clear();
        let hp = self.hp;
        let alpha_sum: f64 = hp.alpha.iter().sum();
        let value_counts = self.corpus.schema.lab_value_counts();
        let mut ll = 0.0;

        // One unit of patient-topic mass.
        let patient_unit = |load: &mut Vec<f64>, k: usize| {
            let total: f64 = load.iter().sum();
            let p = (hp.alpha[k] + load[k]) / (alpha_sum + total);
            load[k] += 1.0;
            p.ln()
        };

        for (var, &a) in self.vars.iter().zip(assignment) {
            match *var {
                OracleVar::Token { patient, entry, .. } => {
                    let tok = self.corpus.patients[patient].tokens[entry];
                    let k = a;
                    ll += patient_unit(&mut c.load[patient], k);
                    let beta = &hp.beta[tok.ty];
                    let beta_sum: f64 = beta.iter().sum();
                    let nw = &mut c.nw[tok.ty][tok.feature * self.topics + k];
                    let nk = &mut c.nk[tok.ty][k];
                    ll += ((beta[tok.feature] + *nw) / (beta_sum + *nk)).ln();
                    *nw += 1.0;
                    *nk += 1.0;
                }
                OracleVar::Observed { patient, index } => {
                    let lab = &self.corpus.patients[patient].observed[index];
                    let l = lab.lab;
                    let k = a;
                    let v_count = value_counts[l];
                    let zeta = &hp.zeta[l];
                    let zeta_sum: f64 = zeta.iter().sum();
                    for &(v, count) in &lab.values {
                        for _ in 0..count {
                            ll += patient_unit(&mut c.load[patient], k);
                            let mv = &mut c.mv[l][k * v_count + v];
                            ll += ((zeta[v] + *mv) / (zeta_sum + c.mk[l][k])).ln();
                            *mv += 1.0;
                            c.mk[l][k] += 1.0;
                            if self.variant.nmar {
                                let (p, q) = (c.p[l][k], c.q[l][k]);
                                ll += ((hp.a[l] + p) / (hp.a[l] + hp.b[l] + p + q)).ln();
                                c.p[l][k] += 1.0;
                            }
                        }
                    }
                }
                OracleVar::Missing { patient, index } => {
                    let l = self.corpus.patients[patient].missing[index];
                    let v_count = value_counts[l];
                    let (k, v) = (a / v_count, a % v_count);
                    ll += patient_unit(&mut c.load[patient], k);
                    let zeta = &hp.zeta[l];
                    let zeta_sum: f64 = zeta.iter().sum();
                    let mv = &mut c.mv[l][k * v_count + v];
                    ll += ((zeta[v] + *mv) / (zeta_sum + c.mk[l][k])).ln();
                    *mv += 1.0;
                    c.mk[l][k] += 1.0;
                    let (p, q) = (c.p[l][k], c.q[l][k]);
                    ll += ((hp.b[l] + q) / (hp.a[l] + hp.b[l] + p + q)).ln();
                    c.q[l][k] += 1.0;
                }
            }
        }
        ll
    }

    /// Calls `f(assignment, log_joint)` for every assignment in odometer order
    /// (last variable fastest).
    fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut c = self.counts();
        let mut a = vec![0usize; self.vars.len()];
        loop {
            let lj = self.log_joint_with(&a, &mut c);
            f(&a, lj);
            let mut i = a.len();
            loop {
                if i == 0 {
                    return;
                }
                i -= 1;
                a[i] += 1;
                if a[i] < self.domains[i] {
                    break;
                }
                a[i] = 0;
            }
        }
    }

    /// Exact log marginal likelihood and per-variable posterior marginals.
    pub fn solve(&self) -> OracleResult {
        let mut max = f64::NEG_INFINITY;
        self.for_each(|_, lj| max = max.max(lj));
        let mut marg: Vec<Vec<f64>> = self.domains.iter().map(|&d| vec![0.0; d]).collect();
        let mut z = 0.0;
        self.for_each(|a, lj| {
            let w = (lj - max).exp();
            z += w;
            for (m, &ai) in marg.iter_mut().zip(a) {
                m[ai] += w;
            }
        });
        for m in &mut marg {
            m.iter_mut().for_each(|x| *x /= z);
        }

        let mut gamma: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut lambda: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut pi: Vec<Vec<Vec<f64>>> = Vec::new();
        for rec in &self.corpus.patients {
            gamma.push(if self.variant.mixview { vec![Vec::new(); rec.tokens.len()] } else { Vec::new() });
            lambda.push(vec![Vec::new(); rec.observed.len()]);
            pi.push(if self.variant.nmar { vec![Vec::new(); rec.missing.len()] } else { Vec::new() });
        }
        for (var, m) in self.vars.iter().zip(marg) {
            match *var {
                OracleVar::Token { patient, entry, instance } => {
                    if instance == 0 {
                        gamma[patient][entry] = m;
                    }
                }
                OracleVar::Observed { patient, index } => lambda[patient][index] = m,
                OracleVar::Missing { patient, index } => pi[patient][index] = m,
            }
        }
        OracleResult {
            log_marginal: max + z.ln(),
            gamma,
            lambda,
            pi,
        }
    }

    /// Dumps the full joint table as CSV: one column per variable, then `log_joint`.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.vars.len()).map(|i| format!("var_{i}")).collect();
        header.push("log_joint".into());
        w.write_record(&header)?;
        let mut err = None;
        self.for_each(|a, lj| {
            if err.is_some() {
                return;
            }
            let mut row: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            row.push(lj.to_string());
            if let Err(e) = w.write_record(&row) {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
