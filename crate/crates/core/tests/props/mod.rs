//! Property suite shared by the `properties` and `acceptance` test targets.

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;

use mixtopic::corpus::{parse_corpus_from, parse_meta_from, Corpus, LabResult, PatientRecord, Schema, Strictness, Token};
use mixtopic::cvb::{aggregate, m_step, train, HyperInit, HyperPriors, Hyperparams, TrainConfig, Trainer, Variant, HYPER_FLOOR};
use mixtopic::downstream::{fit_l1, lambda_max, objective, roc_pr_metrics, FitOptions};
use mixtopic::estimates::{infer_mixture, lab_topic_score, point_estimates};
use mixtopic::eval::{heldout_predictive_loglik, make_folds, split_records, LabCombiner, TinyOracle};
use mixtopic::model_io::{model_from_bytes, model_to_bytes};
use mixtopic::rng;
use mixtopic::simulate::{masked_targets, simulate, SimConfig};

pub const CASES: u32 = 128;

pub type Property = fn() -> Result<(), String>;

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn record(w: Vec<usize>, v: Vec<usize>) -> impl Strategy<Value = PatientRecord> {
    let tokens: Vec<_> = w
        .iter()
        .enumerate()
        .map(|(t, &wt)| {
            prop::collection::btree_map(0..wt, 1u32..4, 0..=wt).prop_map(move |m| {
                m.into_iter().map(|(feature, count)| Token { ty: t, feature, count }).collect::<Vec<_>>()
            })
        })
        .collect();
    let labs: Vec<_> = v
        .iter()
        .enumerate()
        .map(|(l, &vl)| {
            prop::option::of(prop::collection::btree_map(0..vl, 1u32..3, 1..=vl))
                .prop_map(move |m| m.map(|m| LabResult { lab: l, values: m.into_iter().collect() }))
        })
        .collect();
    (tokens, labs).prop_map(|(tokens, labs)| PatientRecord {
        tokens: tokens.into_iter().flatten().collect(),
        observed: labs.into_iter().flatten().collect(),
        missing: vec![],
    })
}

fn corpus_with(max_labs: usize) -> impl Strategy<Value = Corpus> {
    (prop::collection::vec(1usize..5, 1..3), prop::collection::vec(2usize..4, 0..=max_labs), 1usize..7)
        .prop_flat_map(|(w, v, d)| (Just(w.clone()), Just(v.clone()), prop::collection::vec(record(w, v), d)))
        .prop_map(|(w, v, recs)| {
            let schema = Schema::new(&w, &v).unwrap();
            Corpus::from_records(schema, (1..=recs.len() as i64).map(|i| i * 7 - 3).collect(), recs).unwrap()
        })
}

fn corpus() -> impl Strategy<Value = Corpus> {
    corpus_with(3)
}

fn simplex_ok(row: &[f64]) -> bool {
    (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && row.iter().all(|&x| x >= 0.0)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn corpus_round_trip() -> Result<(), String> {
    check((corpus(), any::<u64>(), any::<bool>()), |(c, seed, split)| {
        let meta = c.schema.to_meta_string();
        let mut data = Vec::new();
        c.write_data(&mut data).unwrap();
        let mut lines: Vec<String> = Vec::new();
        for line in String::from_utf8(data).unwrap().lines() {
            let f: Vec<u32> = line.split_whitespace().map(|x| x.parse().unwrap()).collect();
            // Duplicate rows merge by summing, so splitting a count must be invisible.
            if split && f[4] >= 2 {
                lines.push(format!("{} {} {} {} 1", f[0], f[1], f[2], f[3]));
                lines.push(format!("{} {} {} {} {}", f[0], f[1], f[2], f[3], f[4] - 1));
            } else {
                lines.push(line.to_string());
            }
        }
        lines.shuffle(&mut rng::stream(seed, "prop-shuffle", 0));
        let schema = parse_meta_from(meta.as_bytes()).unwrap();
        prop_assert_eq!(&schema, &c.schema);
        let (parsed, skipped) = parse_corpus_from(lines.join("\n").as_bytes(), &schema, Strictness::Strict).unwrap();
        prop_assert_eq!(skipped, 0);
        let with_rows: BTreeMap<i64, &PatientRecord> = c
            .patient_ids
            .iter()
            .zip(&c.patients)
            .filter(|(_, r)| !r.tokens.is_empty() || !r.observed.is_empty())
            .map(|(&id, r)| (id, r))
            .collect();
        prop_assert_eq!(parsed.num_patients(), with_rows.len());
        for (id, rec) in parsed.patient_ids.iter().zip(&parsed.patients) {
            prop_assert_eq!(Some(&rec), with_rows.get(id));
            for t in 0..schema.num_regular_types() {
                let rows: u64 = lines
                    .iter()
                    .map(|l| l.split_whitespace().map(|x| x.parse::<i64>().unwrap()).collect::<Vec<_>>())
                    .filter(|f| f[0] == *id && f[1] == schema.regular_type_id(t) as i64)
                    .map(|f| f[4] as u64)
                    .sum();
                prop_assert_eq!(rec.tokens_of_type(t), rows);
            }
        }
        Ok(())
    })
}

pub fn lab_indicator_is_pure() -> Result<(), String> {
    check(corpus(), |c| {
        let labs = c.schema.num_labs();
        for rec in &c.patients {
            for l in 0..labs {
                let total: u32 = rec.observed.iter().filter(|o| o.lab == l).map(|o| o.total()).sum();
                prop_assert_eq!(rec.is_observed(l), total >= 1);
                prop_assert_eq!(rec.missing.contains(&l), total == 0);
            }
        }
        Ok(())
    })
}

fn train_case() -> impl Strategy<Value = (Corpus, TrainConfig)> {
    (corpus(), 1usize..4, any::<u64>(), any::<bool>(), any::<bool>(), 1usize..4, 0usize..3).prop_map(
        |(c, k, seed, nmar, mixview, shards, burn_in)| {
            let cfg = TrainConfig {
                topics: k,
                max_iters: 4,
                tol: f64::MIN_POSITIVE,
                seed,
                nmar,
                mixview,
                hyper_update_every: 1,
                hyper_burn_in: burn_in,
                shards,
                ..Default::default()
            };
            (c, cfg)
        },
    )
}

/// Normalization, non-negativity, count conservation, leave-one-out
/// consistency and hyperparameter positivity after every sweep.
pub fn sweep_invariants() -> Result<(), String> {
    check(train_case(), |(c, cfg)| {
        let k = cfg.topics;
        let variant = cfg.variant();
        let vc = c.schema.lab_value_counts();
        let mut trainer = Trainer::new(&c, &cfg).unwrap();
        for _ in 0..cfg.max_iters {
            trainer.step().unwrap();
            let model = trainer.model();
            let stats = &model.stats;
            for (rec, post) in c.patients.iter().zip(trainer.posteriors()) {
                for row in post.gamma.chunks(k).chain(post.lambda.chunks(k)) {
                    prop_assert!(simplex_ok(row));
                }
                let mut off = 0;
                for &l in if variant.nmar { &rec.missing[..] } else { &[] } {
                    prop_assert!(simplex_ok(&post.pi[off..off + k * vc[l]]));
                    off += k * vc[l];
                }
                prop_assert_eq!(off, post.pi.len());
                let n_total: f64 = post.n_jk.iter().sum();
                let expect = if variant.mixview { rec.total_tokens() as f64 } else { 0.0 };
                prop_assert!(close(n_total, expect, 1e-6));
                let mut n_jk = vec![0.0; k];
                for (i, t) in rec.tokens.iter().enumerate().take(post.gamma.len() / k) {
                    for kk in 0..k {
                        n_jk[kk] += t.count as f64 * post.gamma[i * k + kk];
                    }
                }
                for kk in 0..k {
                    prop_assert!(close(n_jk[kk], post.n_jk[kk], 1e-9));
                    prop_assert!(post.m_jk[kk] >= -1e-12);
                }
            }
            let token_total: f64 = stats.types.iter().map(|t| t.totals.iter().sum::<f64>()).sum();
            let expect = if variant.mixview { c.total_tokens() as f64 } else { 0.0 };
            prop_assert!(close(token_total, expect, 1e-6));
            for (l, lab) in stats.labs.iter().enumerate() {
                let y: u64 = c.patients.iter().flat_map(|r| &r.observed).filter(|o| o.lab == l).map(|o| o.total() as u64).sum();
                // Under MAR the observation mass is not tracked; the value counts still are.
                let p_expect = if variant.nmar { y as f64 } else { 0.0 };
                prop_assert!(close(lab.observed.iter().sum::<f64>(), p_expect, 1e-6));
                let missing_mass: f64 = if variant.nmar { lab.missing.iter().sum() } else { 0.0 };
                prop_assert!(close(lab.value_totals.iter().sum::<f64>(), y as f64 + missing_mass, 1e-6));
                let missing = c.patients.iter().filter(|r| r.missing.contains(&l)).count();
                let expect = if variant.nmar { missing as f64 } else { 0.0 };
                prop_assert!(close(lab.missing.iter().sum::<f64>(), expect, 1e-6));
            }
            prop_assert!(stats.values().all(|x| x >= -1e-9));
            let fresh = aggregate(&c, trainer.posteriors(), k, variant);
            prop_assert!(stats.max_abs_diff(&fresh) <= 1e-6);
            prop_assert!(model.hyper.all_values().all(|x| x.is_finite() && x >= HYPER_FLOOR));
            prop_assert!(model.trace.last().unwrap().loglik.is_finite());
        }
        Ok(())
    })
}

pub fn m_step_keeps_hyperparameters_positive() -> Result<(), String> {
    let init = (1e-6f64..1e3, 1e-6f64..1e3, 1e-6f64..1e3, 1e-6f64..1e3, 1e-6f64..1e3);
    check((train_case(), init), |((c, cfg), (alpha, beta, zeta, a, b))| {
        let hp = Hyperparams::symmetric(&c.schema, cfg.topics, &HyperInit { alpha, beta, zeta, a, b }, HyperPriors::default());
        let cfg = TrainConfig { hyper_update_every: 0, ..cfg };
        let mut trainer = Trainer::with_hyperparams(&c, &cfg, hp.clone()).unwrap();
        trainer.step().unwrap();
        let loads: Vec<Vec<f64>> = trainer.posteriors().iter().map(|p| p.load()).collect();
        let mut h = hp;
        for _ in 0..5 {
            h = m_step(&trainer.model().stats, &h, &loads, cfg.nmar);
            prop_assert!(h.all_values().all(|x| x.is_finite() && x >= HYPER_FLOOR));
        }
        Ok(())
    })
}

/// With every test taken, the missing-lab channel is never used and the lab
/// loads aggregate the same way under both variants.
pub fn fully_observed_labs_skip_missing_channel() -> Result<(), String> {
    let strat = corpus().prop_map(|c| {
        let v = c.schema.lab_value_counts();
        let recs = c
            .patients
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for &l in &r.missing.clone() {
                    r.observed.push(LabResult { lab: l, values: vec![(v[l] - 1, 1)] });
                }
                r
            })
            .collect();
        Corpus::from_records(c.schema.clone(), c.patient_ids.clone(), recs).unwrap()
    });
    check((strat, 1usize..4, any::<u64>()), |(c, k, seed)| {
        let run = |nmar: bool| {
            let cfg = TrainConfig { topics: k, max_iters: 3, tol: f64::MIN_POSITIVE, seed, nmar, hyper_update_every: 0, ..Default::default() };
            let mut t = Trainer::new(&c, &cfg).unwrap();
            let init = t.posteriors().to_vec();
            t.run(3).unwrap();
            (init, t.finish())
        };
        let (init_nmar, nmar) = run(true);
        let (init_mar, mar) = run(false);
        prop_assert_eq!(&init_nmar, &init_mar);
        for m in [&nmar, &mar] {
            for (rec, post) in c.patients.iter().zip(m.posteriors.as_ref().unwrap()) {
                prop_assert!(rec.missing.is_empty() && post.pi.is_empty());
                let mut m_jk = vec![0.0; k];
                for (o, lab) in rec.observed.iter().enumerate() {
                    for kk in 0..k {
                        m_jk[kk] += lab.total() as f64 * post.lambda[o * k + kk];
                    }
                }
                for kk in 0..k {
                    prop_assert!(close(m_jk[kk], post.m_jk[kk], 1e-9));
                }
            }
            prop_assert!(m.stats.labs.iter().all(|l| l.missing.iter().all(|&q| q == 0.0)));
        }
        Ok(())
    })
}

pub fn training_is_deterministic() -> Result<(), String> {
    check((train_case(), 2usize..4), |((c, cfg), threads)| {
        let a = train(&c, &cfg).unwrap();
        let b = train(&c, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = pool.install(|| train(&c, &cfg)).unwrap();
        let one = single.install(|| train(&c, &cfg)).unwrap();
        prop_assert_eq!(&many, &one);
        Ok(())
    })
}

pub fn model_round_trip() -> Result<(), String> {
    check((train_case(), 0usize..3, any::<prop::sample::Index>()), |((c, cfg), iters, cut)| {
        let cfg = TrainConfig { max_iters: iters, ..cfg };
        let model = train(&c, &cfg).unwrap();
        let bytes = model_to_bytes(&model).unwrap();
        prop_assert_eq!(&model_from_bytes(&bytes).unwrap(), &model);
        let n = cut.index(bytes.len());
        prop_assert!(model_from_bytes(&bytes[..n]).is_err());
        Ok(())
    })
}

pub fn estimates_are_normalized() -> Result<(), String> {
    check(train_case(), |(c, cfg)| {
        let model = train(&c, &cfg).unwrap();
        let est = point_estimates(&model);
        let k = est.topics;
        for (t, phi) in est.phi.iter().enumerate() {
            let w = phi.len() / k;
            for kk in 0..k {
                let col: Vec<f64> = (0..w).map(|f| est.phi_at(t, f, kk)).collect();
                prop_assert!(simplex_ok(&col));
            }
        }
        for eta in &est.eta {
            for row in eta.chunks(eta.len() / k) {
                prop_assert!(simplex_ok(row));
            }
        }
        prop_assert!(est.psi.iter().flatten().all(|&p| p > 0.0 && p < 1.0));
        for rec in &c.patients {
            let theta = infer_mixture(rec, &est, 5).theta;
            prop_assert!(simplex_ok(&theta) && theta.iter().all(|&x| x > 0.0));
        }
        Ok(())
    })
}

/// The converged mixture does not depend on the order of the record's rows.
pub fn infer_row_order_invariance() -> Result<(), String> {
    check((train_case(), any::<u64>()), |((c, cfg), seed)| {
        let model = train(&c, &cfg).unwrap();
        let est = point_estimates(&model);
        let mut r = rng::stream(seed, "prop-rows", 0);
        for rec in &c.patients {
            let mut shuffled = rec.clone();
            shuffled.tokens.shuffle(&mut r);
            shuffled.observed.shuffle(&mut r);
            shuffled.missing.shuffle(&mut r);
            let a = infer_mixture(rec, &est, 2000).theta;
            let b = infer_mixture(&shuffled, &est, 2000).theta;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(close(*x, *y, 1e-6), "{:?} vs {:?}", a, b);
            }
        }
        Ok(())
    })
}

pub fn lab_score_scale_invariance() -> Result<(), String> {
    let strat = (corpus_with(4).prop_filter("needs labs", |c| c.schema.num_labs() > 0), 1usize..4, any::<u64>());
    check((strat, any::<prop::sample::Index>(), 1e-3f64..1e3), |((c, k, seed), topic, scale)| {
        let cfg = TrainConfig { topics: k, max_iters: 2, seed, ..Default::default() };
        let est = point_estimates(&train(&c, &cfg).unwrap());
        let topic = topic.index(k);
        let mut scaled = est.clone();
        scaled.psi.iter_mut().for_each(|p| p[topic] *= scale);
        for value in 0..2 {
            let a = lab_topic_score(&est, value);
            let b = lab_topic_score(&scaled, value);
            for kk in 0..k {
                let col: Vec<f64> = a.iter().map(|row| row[kk]).collect();
                prop_assert!(simplex_ok(&col));
            }
            for (ra, rb) in a.iter().zip(&b) {
                for (x, y) in ra.iter().zip(rb) {
                    prop_assert!(close(*x, *y, 1e-12));
                }
            }
        }
        Ok(())
    })
}

fn sim_config() -> impl Strategy<Value = SimConfig> {
    (0usize..30, 1usize..4, prop::collection::vec(1usize..6, 1..3), prop::collection::vec(2usize..4, 0..4), any::<u64>()).prop_map(
        |(patients, topics, feature_counts, lab_value_counts, seed)| SimConfig {
            patients,
            topics,
            feature_counts,
            lab_value_counts,
            tokens_per_type: (0, 4),
            seed,
            ..Default::default()
        },
    )
}

pub fn simulation_determinism_and_partition() -> Result<(), String> {
    check(sim_config(), |cfg| {
        let (c1, t1) = simulate(&cfg).unwrap();
        let (c2, t2) = simulate(&cfg).unwrap();
        prop_assert_eq!(&c1, &c2);
        prop_assert_eq!(&t1, &t2);
        let labs = cfg.lab_value_counts.len();
        let mut cells = vec![0u8; cfg.patients * labs];
        for (j, rec) in c1.patients.iter().enumerate() {
            for o in &rec.observed {
                cells[j * labs + o.lab] += 1;
            }
        }
        for target in masked_targets(&t1) {
            cells[target.patient * labs + target.lab] += 1;
        }
        prop_assert!(cells.iter().all(|&x| x == 1));
        Ok(())
    })
}

pub fn folds_partition_patients() -> Result<(), String> {
    let strat = (2usize..200).prop_flat_map(|n| (Just(n), 2..=n.min(10), any::<u64>(), prop::option::of(prop::collection::vec(any::<bool>(), n))));
    check(strat, |(n, folds, seed, strata)| {
        let split = make_folds(n, folds, seed, strata.as_deref()).unwrap();
        prop_assert_eq!(split.len(), folds);
        let mut seen = vec![0u8; n];
        for f in &split {
            prop_assert!(!f.is_empty());
            f.iter().for_each(|&i| seen[i] += 1);
        }
        prop_assert!(seen.iter().all(|&x| x == 1));
        if let Some(s) = strata {
            let rate = s.iter().filter(|&&b| b).count() as f64 / n as f64;
            for f in &split {
                let pos = f.iter().filter(|&&i| s[i]).count() as f64;
                prop_assert!((pos - rate * f.len() as f64).abs() <= 1.0 + 1e-9);
            }
        }
        Ok(())
    })
}

pub fn heldout_score_is_additive() -> Result<(), String> {
    check((train_case(), any::<u64>()), |((c, cfg), seed)| {
        let est = point_estimates(&train(&c, &cfg).unwrap());
        let halves = split_records(&c.patients, 0.5, seed);
        let Ok(score) = heldout_predictive_loglik(&est, &halves, 5, LabCombiner::Imputed) else {
            return Ok(());
        };
        let sum: f64 = score.per_patient.iter().flatten().sum();
        prop_assert!(close(sum, score.total, 1e-9 * sum.abs().max(1.0)));
        prop_assert_eq!(score.scored, score.per_patient.iter().flatten().count());
        Ok(())
    })
}

fn tiny_corpus() -> impl Strategy<Value = Corpus> {
    (2usize..4, 1usize..4)
        .prop_flat_map(|(w, d)| {
            let rec = (prop::collection::btree_map(0..w, 1u32..3, 1..3), prop::option::of(0usize..2)).prop_map(|(toks, lab)| {
                PatientRecord {
                    tokens: toks.into_iter().map(|(feature, count)| Token { ty: 0, feature, count }).collect(),
                    observed: lab.map(|v| LabResult { lab: 0, values: vec![(v, 1)] }).into_iter().collect(),
                    missing: vec![],
                }
            });
            (Just(w), prop::collection::vec(rec, d))
        })
        .prop_map(|(w, recs)| {
            let ids = (1..=recs.len() as i64).collect();
            Corpus::from_records(Schema::new(&[w], &[2]).unwrap(), ids, recs).unwrap()
        })
}

pub fn oracle_self_consistency() -> Result<(), String> {
    let strat = (tiny_corpus(), prop::collection::vec(0.2f64..3.0, 2), any::<bool>(), any::<bool>());
    check(strat, |(c, alpha, nmar, mixview)| {
        let mut hp = Hyperparams::symmetric(&c.schema, 2, &HyperInit::default(), HyperPriors::default());
        hp.alpha = alpha;
        let variant = Variant { nmar, mixview };
        let exact = TinyOracle::new(&c, &hp, variant).unwrap().solve();
        prop_assert!(exact.log_marginal.is_finite());
        for row in exact.gamma.iter().chain(&exact.lambda).chain(&exact.pi).flatten() {
            prop_assert!(simplex_ok(row));
        }
        let mut swapped = hp.clone();
        swapped.alpha.reverse();
        let other = TinyOracle::new(&c, &swapped, variant).unwrap().solve();
        prop_assert!(close(exact.log_marginal, other.log_marginal, 1e-12 * exact.log_marginal.abs().max(1.0)));
        Ok(())
    })
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60)
        .prop_flat_map(|n| (prop::collection::vec(0u32..20, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
        .prop_map(|(s, y)| (s.into_iter().map(f64::from).collect(), y))
}

pub fn auroc_monotone_invariance() -> Result<(), String> {
    check(labelled_scores(), |(s, y)| {
        let base = roc_pr_metrics(&s, &y).unwrap();
        let t: Vec<f64> = s.iter().map(|x| (x / 3.0).exp() + x.powi(3) - 7.0).collect();
        let moved = roc_pr_metrics(&t, &y).unwrap();
        prop_assert_eq!(base.auroc, moved.auroc);
        prop_assert_eq!(base.auprc, moved.auprc);
        prop_assert!((0.0..=1.0).contains(&base.auroc));
        Ok(())
    })
}

fn regression_data() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (8usize..40, 1usize..5)
        .prop_flat_map(|(n, k)| {
            (prop::collection::vec(prop::collection::vec(-2.0f64..2.0, k), n), prop::collection::vec(any::<bool>(), n))
        })
        .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
}

pub fn l1_objective_non_increasing() -> Result<(), String> {
    check((regression_data(), 0.0f64..0.2), |((x, y), lambda)| {
        let mut prev = f64::INFINITY;
        for iters in 0..15 {
            let opts = FitOptions { lambda, max_iters: iters, tol: 0.0, ..Default::default() };
            let obj = objective(&x, &y, &fit_l1(&x, &y, &opts).unwrap());
            prop_assert!(obj <= prev + 1e-12, "sweep {}: {} > {}", iters, obj, prev);
            prev = obj;
        }
        Ok(())
    })
}

/// The support of the lasso path is not monotone in general (a feature can
/// leave as λ shrinks), so this checks what does hold: the L1 norm of the
/// solution never grows with λ, everything is zero from λ_max up, and with a
/// single feature the support is monotone.
pub fn sparsity_monotone_along_path() -> Result<(), String> {
    check(regression_data(), |(x, y)| {
        let lmax = lambda_max(&x, &y).unwrap();
        let fit = |x: &[Vec<f64>], lambda: f64| {
            let opts = FitOptions { lambda, max_iters: 20_000, tol: 1e-12, ..Default::default() };
            fit_l1(x, &y, &opts).unwrap()
        };
        for scale in [1.0, 1.5, 10.0] {
            let w = fit(&x, lmax * scale).weights;
            prop_assert!(w.iter().all(|&w| w == 0.0), "scale {}: {:?}", scale, w);
        }
        let mut prev: f64 = 0.0;
        for i in 0..10 {
            let lambda = lmax * 0.6f64.powi(i);
            let norm: f64 = fit(&x, lambda).weights.iter().map(|w| w.abs()).sum();
            // Listed from large to small λ, so the norm may only grow.
            prop_assert!(norm >= prev - 1e-6 * prev.max(1.0), "λ={}: |w|_1 {} after {}", lambda, norm, prev);
            prev = norm;
        }
        let single: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0]]).collect();
        let lmax1 = lambda_max(&single, &y).unwrap();
        let mut active = false;
        for i in 0..10 {
            let nonzero = fit(&single, lmax1 * 0.6f64.powi(i)).weights[0] != 0.0;
            prop_assert!(nonzero || !active);
            active = nonzero;
        }
        Ok(())
    })
}

pub fn suite() -> Vec<(&'static str, Property)> {
    vec![
        ("corpus round trip", corpus_round_trip),
        ("lab indicator is pure", lab_indicator_is_pure),
        ("sweep invariants", sweep_invariants),
        ("m-step positivity", m_step_keeps_hyperparameters_positive),
        ("fully observed labs", fully_observed_labs_skip_missing_channel),
        ("training determinism", training_is_deterministic),
        ("model round trip", model_round_trip),
        ("estimates normalized", estimates_are_normalized),
        ("infer row order", infer_row_order_invariance),
        ("lab score scale", lab_score_scale_invariance),
        ("simulation determinism and partition", simulation_determinism_and_partition),
        ("fold partition", folds_partition_patients),
        ("held-out additivity", heldout_score_is_additive),
        ("oracle self-consistency", oracle_self_consistency),
        ("auroc monotone invariance", auroc_monotone_invariance),
        ("l1 objective non-increasing", l1_objective_non_increasing),
        ("sparsity along path", sparsity_monotone_along_path),
    ]
}
