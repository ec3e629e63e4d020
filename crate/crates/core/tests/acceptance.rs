//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test --release -p mixtopic --test acceptance -- --nocapture --test-threads=1`.

use std::time::Instant;

use rand::Rng;

use mixtopic::corpus::{Corpus, LabResult, PatientRecord, Schema, Token};
use mixtopic::cvb::{HyperInit, HyperPriors, Hyperparams, TrainConfig, Trainer, Variant};
use mixtopic::cvb::train;
use mixtopic::downstream::{fit_l1, lambda_max, mortality_cv, roc_pr_metrics, FitOptions, MortalityPlan};
use mixtopic::estimates::point_estimates;
use mixtopic::eval::{imputation_cv, match_topics, run_cv, summarize, CvPlan, ImputationCurve, LabCombiner, TinyOracle};
use mixtopic::simulate::{masked_targets, simulate, SimConfig};
use mixtopic::rng;

mod props;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("\ncriterion {id} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

struct TinyInstance {
    corpus: Corpus,
    hp: Hyperparams,
}

fn tiny_instance(seed: u64) -> TinyInstance {
    let mut r = rng::stream(seed, "acceptance-tiny", 0);
    let w = r.random_range(2..=3usize);
    let d = r.random_range(1..=3usize);
    let schema = Schema::new(&[w], &[2]).unwrap();
    let patients: Vec<PatientRecord> = (0..d)
        .map(|_| {
            let mut features: Vec<usize> = (0..w).collect();
            let entries = r.random_range(1..=2usize);
            let tokens = (0..entries)
                .map(|_| {
                    let f = features.remove(r.random_range(0..features.len()));
                    Token { ty: 0, feature: f, count: r.random_range(1..=2) }
                })
                .collect::<Vec<_>>();
            let mut tokens = tokens;
            tokens.sort_by_key(|t| t.feature);
            if r.random::<f64>() < 0.5 {
                PatientRecord {
                    tokens,
                    observed: vec![LabResult { lab: 0, values: vec![(r.random_range(0..2), 1)] }],
                    missing: vec![],
                }
            } else {
                PatientRecord { tokens, observed: vec![], missing: vec![0] }
            }
        })
        .collect();
    let corpus = Corpus::from_records(schema.clone(), (1..=d as i64).collect(), patients).unwrap();
    let mut hp = Hyperparams::symmetric(&schema, 2, &HyperInit::default(), HyperPriors::default());
    hp.alpha = (0..2).map(|_| r.random_range(0.2..2.0)).collect();
    hp.beta = vec![(0..w).map(|_| r.random_range(0.1..1.0)).collect()];
    hp.zeta = vec![(0..2).map(|_| r.random_range(0.3..2.0)).collect()];
    hp.a = vec![r.random_range(0.5..3.0)];
    hp.b = vec![r.random_range(0.5..3.0)];
    TinyInstance { corpus, hp }
}

#[test]
fn criterion_1_oracle_equivalence() {
    let start = Instant::now();
    let full = Variant { nmar: true, mixview: true };
    let instances = 25;
    let (mut within, mut total) = (0usize, 0usize);
    let mut perm_ok = true;
    let mut finite_ok = true;
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let inst = tiny_instance(seed);
        let oracle = TinyOracle::new(&inst.corpus, &inst.hp, full).unwrap();
        assert!(oracle.space_size() <= 1_000_000);
        let exact = oracle.solve();
        finite_ok &= exact.log_marginal.is_finite();

        let mut swapped = inst.hp.clone();
        swapped.alpha.reverse();
        let exact_swapped = TinyOracle::new(&inst.corpus, &swapped, full).unwrap().solve();
        perm_ok &= (exact.log_marginal - exact_swapped.log_marginal).abs() <= 1e-12 * exact.log_marginal.abs().max(1.0);

        let cfg = TrainConfig { topics: 2, max_iters: 500, tol: 1e-14, hyper_update_every: 0, seed, ..Default::default() };
        let mut trainer = Trainer::with_hyperparams(&inst.corpus, &cfg, inst.hp.clone()).unwrap();
        trainer.run(cfg.max_iters).unwrap();
        let k = 2;
        for (j, post) in trainer.posteriors().iter().enumerate() {
            let rows = post
                .gamma
                .chunks(k)
                .zip(&exact.gamma[j])
                .chain(post.lambda.chunks(k).zip(&exact.lambda[j]))
                .chain(post.pi.chunks(2 * k).zip(&exact.pi[j]));
            for (approx, ex) in rows {
                let d = tv(approx, ex);
                worst = worst.max(d);
                total += 1;
                within += (d <= 0.15) as usize;
            }
        }
    }
    let share = within as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = finite_ok && perm_ok && share >= 0.9 && secs < 60.0;
    report(
        1,
        "oracle equivalence",
        pass,
        format!(
            "{instances} instances, {within}/{total} variables within TV 0.15 ({:.1}%, need >= 90%), worst TV {worst:.3}, finite={finite_ok}, permutation-invariant={perm_ok}, {secs:.1}s",
            100.0 * share
        ),
    );
    assert!(pass);
}

fn mean_curve(curves: &[ImputationCurve]) -> Vec<(usize, f64)> {
    let n = curves.len() as f64;
    (0..curves[0].points.len())
        .map(|i| (curves[0].points[i].0, curves.iter().map(|c| c.points[i].1).sum::<f64>() / n))
        .collect()
}

#[test]
fn criterion_2_nmar_beats_mar_on_missing_labs() {
    let start = Instant::now();
    // Sparse regular data (1-3 tokens per type) so the lab channel carries most
    // of the information about each patient.
    let (corpus, truth) = simulate(&SimConfig {
        patients: 2000,
        topics: 5,
        feature_counts: vec![50, 50],
        lab_value_counts: vec![2; 20],
        tokens_per_type: (1, 3),
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    let targets = masked_targets(&truth);
    let plan = CvPlan { folds: 5, seed: 0, combiner: LabCombiner::Imputed, ..Default::default() };
    let checkpoints: Vec<usize> = (0..=100).step_by(10).collect();
    let curve = |nmar: bool, mixview: bool| {
        let cfg = TrainConfig { topics: 5, max_iters: 100, nmar, mixview, ..Default::default() };
        mean_curve(&imputation_cv(&corpus, &targets, &plan, &cfg, &checkpoints).unwrap())
    };
    let nmar_mix = curve(true, true);
    let nmar_lab = curve(true, false);
    let mar_mix = curve(false, true);
    let mar_lab = curve(false, false);
    for (name, c) in [("nmar-mixview", &nmar_mix), ("nmar-labview", &nmar_lab), ("mar-mixview", &mar_mix), ("mar-labview", &mar_lab)] {
        let pts: Vec<String> = c.iter().map(|(i, v)| format!("{i}:{v:.4}")).collect();
        println!("  {name:13} {}", pts.join(" "));
    }
    let last = |c: &[(usize, f64)]| c.last().unwrap().1;
    let peak = |c: &[(usize, f64)]| c.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let ordering = last(&nmar_mix) > last(&nmar_lab) && last(&nmar_lab) > last(&mar_mix).max(last(&mar_lab));
    // Each MAR curve against the NMAR variant with the same view.
    let curves_below = peak(&mar_mix) <= last(&nmar_mix) && peak(&mar_lab) <= last(&nmar_lab);
    let secs = start.elapsed().as_secs_f64();
    let pass = ordering && curves_below && secs < 600.0;
    report(
        2,
        "NMAR > MAR on missing labs",
        pass,
        format!(
            "final nmar-mixview {:.4} > nmar-labview {:.4} > mar-mixview {:.4} / mar-labview {:.4}: {ordering}; MAR peaks {:.4}/{:.4} <= same-view NMAR finals: {curves_below} (peak vs lower NMAR final: {}); {secs:.1}s",
            last(&nmar_mix),
            last(&nmar_lab),
            last(&mar_mix),
            last(&mar_lab),
            peak(&mar_mix),
            peak(&mar_lab),
            peak(&mar_mix).max(peak(&mar_lab)) <= last(&nmar_lab),
        ),
    );
    assert!(pass);
}

fn k5_simulation(patients: usize) -> SimConfig {
    SimConfig {
        patients,
        topics: 5,
        feature_counts: vec![50, 50],
        lab_value_counts: vec![2; 20],
        seed: 0,
        ..Default::default()
    }
}

#[test]
fn criterion_3_parameter_recovery() {
    let start = Instant::now();
    let (corpus, truth) = simulate(&k5_simulation(1000)).unwrap();
    let model = train(&corpus, &TrainConfig { topics: 5, max_iters: 100, ..Default::default() }).unwrap();
    let est = point_estimates(&model);
    let k = 5;
    // One vector per topic: φ of every regular type, concatenated.
    let truth_cols: Vec<Vec<f64>> = (0..k).map(|kk| truth.phi.iter().flat_map(|t| t[kk].clone()).collect()).collect();
    let est_cols: Vec<Vec<f64>> = (0..k)
        .map(|kk| est.phi.iter().flat_map(|t| t.iter().skip(kk).step_by(k).copied()).collect())
        .collect();
    let (assign, sims) = match_topics(&truth_cols, &est_cols);
    let mean_cos = sims.iter().sum::<f64>() / k as f64;
    let mut abs_err = 0.0;
    for (l, psi) in truth.psi.iter().enumerate() {
        for kk in 0..k {
            abs_err += (psi[kk] - est.psi[l][assign[kk]]).abs();
        }
    }
    let mae = abs_err / (truth.psi.len() * k) as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = mean_cos >= 0.8 && mae <= 0.15 && secs < 300.0;
    report(
        3,
        "parameter recovery",
        pass,
        format!("matched mean cosine {mean_cos:.4} (need >= 0.8), per-topic {sims:.3?}, psi MAE {mae:.4} (need <= 0.15), {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_model_selection() {
    let start = Instant::now();
    let (corpus, _) = simulate(&k5_simulation(1000)).unwrap();
    let plan = CvPlan { folds: 5, seed: 0, ..Default::default() };
    let cfgs: Vec<TrainConfig> = [2, 5]
        .iter()
        .map(|&k| TrainConfig { topics: k, max_iters: 100, ..Default::default() })
        .collect();
    let rows = run_cv(&corpus, &plan, &cfgs).unwrap();
    let (summary, best) = summarize(&rows, cfgs.len());
    let (k2, k5) = (&summary[0], &summary[1]);
    let margin = k5.mean - k2.mean;
    let se = k5.se.max(k2.se);
    let pass = k2.folds_ok == 5 && k5.folds_ok == 5 && margin >= 3.0 * se;
    report(
        4,
        "model selection K=5 over K=2",
        pass,
        format!(
            "K=2 mean {:.3} (se {:.3}), K=5 mean {:.3} (se {:.3}), margin {margin:.3} = {:.1} x max SE (need >= 3), best config K={}, {:.1}s",
            k2.mean,
            k2.se,
            k5.mean,
            k5.se,
            margin / se,
            best.map_or(0, |b| cfgs[b].topics),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_invariant_suite() {
    let start = Instant::now();
    let suite = props::suite();
    let failed: Vec<String> = suite
        .iter()
        .filter_map(|(name, prop)| prop().err().map(|e| format!("{name}: {}", e.lines().next().unwrap_or(""))))
        .collect();
    let pass = failed.is_empty();
    report(
        5,
        "invariant suite",
        pass,
        format!(
            "{} properties x {} cases, {} failed{}; {:.1}s",
            suite.len(),
            props::CASES,
            failed.len(),
            if pass { String::new() } else { format!(" ({})", failed.join("; ")) },
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_downstream_sanity() {
    let start = Instant::now();
    let (corpus, truth) = simulate(&k5_simulation(2000)).unwrap();
    // Planted outcome: logistic in the first topic's true share.
    let mut r = rng::stream(0, "planted-labels", 0);
    let risk: Vec<f64> = truth.theta.iter().map(|t| 1.0 / (1.0 + (-(-3.0 + 6.0 * t[0])).exp())).collect();
    let labels: Vec<bool> = risk.iter().map(|&p| r.random::<f64>() < p).collect();
    let bayes = roc_pr_metrics(&risk, &labels).unwrap().auroc;

    let cfg = TrainConfig { topics: 5, max_iters: 100, ..Default::default() };
    let plan = MortalityPlan::default();
    let planted = mortality_cv(&corpus, &labels, &cfg, &plan).unwrap();

    let mut shuffled = labels.clone();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut rng::stream(0, "shuffle-control", 0));
    let control = mortality_cv(&corpus, &shuffled, &cfg, &plan).unwrap();

    let hand = roc_pr_metrics(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap().auroc;
    let pass = planted.metrics.auroc >= 0.85 && (0.45..=0.55).contains(&control.metrics.auroc) && hand == 0.75;
    report(
        6,
        "downstream pipeline sanity",
        pass,
        format!(
            "planted AUROC {:.4} (need >= 0.85; true-theta AUROC {bayes:.4}), AUPRC {:.4}, prevalence {:.3}; shuffled-label AUROC {:.4} (need in [0.45, 0.55]); hand example {hand} (need 0.75); {:.1}s",
            planted.metrics.auroc,
            planted.metrics.auprc,
            labels.iter().filter(|&&b| b).count() as f64 / labels.len() as f64,
            control.metrics.auroc,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Plain gradient descent with Armijo backtracking on the mean logistic loss.
fn gradient_descent_logistic(x: &[Vec<f64>], y: &[bool]) -> (f64, Vec<f64>) {
    let k = x[0].len();
    let n = x.len() as f64;
    let loss_grad = |p: &[f64]| {
        let mut loss = 0.0;
        let mut g = vec![0.0; k + 1];
        for (row, &t) in x.iter().zip(y) {
            let eta = p[0] + (0..k).map(|j| p[j + 1] * row[j]).sum::<f64>();
            loss += (1.0 + eta.exp()).ln() - if t { eta } else { 0.0 };
            let resid = 1.0 / (1.0 + (-eta).exp()) - t as u8 as f64;
            g[0] += resid;
            for j in 0..k {
                g[j + 1] += resid * row[j];
            }
        }
        (loss / n, g.into_iter().map(|v| v / n).collect::<Vec<f64>>())
    };
    let mut p = vec![0.0; k + 1];
    let mut step = 1.0;
    for _ in 0..200_000 {
        let (f, g) = loss_grad(&p);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < 1e-12 {
            break;
        }
        step *= 2.0;
        loop {
            let cand: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if loss_grad(&cand).0 <= f - 0.5 * step * gnorm2 {
                p = cand;
                break;
            }
            step *= 0.5;
        }
    }
    (p[0], p[1..].to_vec())
}

#[test]
fn criterion_7_l1_logistic_oracle() {
    // Fixed, non-separable 20-point set with three features.
    let x: Vec<Vec<f64>> = (0..20)
        .map(|i| {
            let t = i as f64;
            vec![(t * 0.7).sin(), (t * 1.3).cos(), ((t * 0.37).sin() * 2.0).tanh()]
        })
        .collect();
    let y: Vec<bool> = (0..20).map(|i| [1, 4, 5, 8, 9, 12, 14, 15, 17, 19].contains(&i)).collect();
    let fit = fit_l1(&x, &y, &FitOptions { lambda: 0.0, max_iters: 100_000, tol: 1e-13, ..Default::default() }).unwrap();
    let (b, w) = gradient_descent_logistic(&x, &y);
    let max_diff = fit
        .weights
        .iter()
        .zip(&w)
        .map(|(a, b)| (a - b).abs())
        .fold((fit.intercept - b).abs(), f64::max);
    let big = fit_l1(&x, &y, &FitOptions { lambda: 10.0 * lambda_max(&x, &y).unwrap(), ..Default::default() }).unwrap();
    let zeros = big.weights.iter().all(|&v| v == 0.0);
    let pass = max_diff <= 1e-4 && zeros;
    report(
        7,
        "L1 logistic oracle",
        pass,
        format!(
            "lambda=0 weights {:.6?} vs gradient-descent oracle {:.6?}, max abs diff {max_diff:.2e} (need <= 1e-4); large-lambda weights {:?} all exactly zero: {zeros}",
            fit.weights, w, big.weights
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_performance_envelope() {
    let (corpus, _) = simulate(&SimConfig {
        patients: 1000,
        topics: 20,
        feature_counts: vec![250, 250],
        lab_value_counts: vec![2; 20],
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    // Shard assignment is part of the model configuration; the thread count
    // only sizes the worker pool.
    let run = |threads: usize, shards: usize| {
        let cfg = TrainConfig { topics: 20, max_iters: 100, tol: f64::MIN_POSITIVE, shards, ..Default::default() };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let start = Instant::now();
        let model = pool.install(|| train(&corpus, &cfg)).unwrap();
        (model.trace.last().unwrap().loglik, model.iterations, start.elapsed().as_secs_f64())
    };
    let (ll1, it1, secs1) = run(1, 4);
    let (ll4, it4, secs4) = run(4, 4);
    let (llseq, _, _) = run(1, 1);
    let rel = (ll4 - ll1).abs() / ll1.abs();
    let rel_seq = (ll4 - llseq).abs() / llseq.abs();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pass = it1 == 100 && it4 == 100 && secs4 < 60.0 && rel <= 1e-4;
    report(
        8,
        "performance envelope",
        pass,
        format!(
            "D=1000, sum W=500, L=20, K=20, 100 iters, 4 shards: 4 threads {secs4:.1}s (need < 60s), 1 thread {secs1:.1}s, {cores} core(s) available; final loglik 1 thread {ll1:.4}, 4 threads {ll4:.4}, relative diff {rel:.2e} (need <= 1e-4); sequential sweep {llseq:.4} (relative diff to 4 shards {rel_seq:.2e})"
        ),
    );
    assert!(pass);
}
