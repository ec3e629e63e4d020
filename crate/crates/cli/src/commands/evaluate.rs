use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use mixtopic::estimates::{infer_mixtures, point_estimates};
use mixtopic::eval::{heldout_predictive_loglik, missing_lab_loglik, run_cv, split_records, summarize, CvPlan, LabCombiner};
use mixtopic::simulate::read_truth_sidecar;

use super::{default_manifest, load_corpus, load_data, load_trained, print_metrics, usage, ModelOpts};
use crate::manifest::{suffixed, Run};

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Trained model to score. Without it, topic counts are cross-validated.
    #[arg(long, conflicts_with_all = ["meta", "topics", "plan"])]
    pub model: Option<PathBuf>,
    #[arg(long, required_unless_present = "model")]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated topic counts to compare, e.g. 10,25,50.
    #[arg(long, value_delimiter = ',', required_unless_present = "model")]
    pub topics: Vec<usize>,
    /// JSON cross-validation plan; the flags below override its fields.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Share of each scored patient's records held out for scoring.
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    /// Inference sweeps per held-out patient.
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// as-written, product or imputed.
    #[arg(long)]
    pub combiner: Option<LabCombiner>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden lab results (a simulation `.truth` file) to score imputation on.
    #[arg(long, requires = "model")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub lenient: bool,
    #[command(flatten)]
    pub train: ModelOpts,
    /// Per-fold scores (cross-validation) or per-patient scores (model).
    #[arg(long)]
    pub out: PathBuf,
    /// Cross-validation summary, one row per topic count. Defaults to
    /// `<out>.summary.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

impl EvaluateArgs {
    fn plan(&self, run: &mut Run) -> Result<CvPlan> {
        let mut plan = match &self.plan {
            Some(path) => {
                run.input(path)?;
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                serde_json::from_reader(BufReader::new(file))
                    .map_err(|e| mixtopic::Error::Validation(format!("{}: {e}", path.display())))?
            }
            None => CvPlan::default(),
        };
        if let Some(f) = self.folds {
            plan.folds = f;
        }
        if let Some(x) = self.eval_fraction {
            plan.eval_fraction = x;
        }
        if let Some(s) = self.sweeps {
            plan.infer_sweeps = s;
        }
        if let Some(c) = self.combiner {
            plan.combiner = c;
        }
        if let Some(s) = self.seed {
            plan.seed = s;
        }
        Ok(plan)
    }
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let mut run = Run::new("evaluate", &args, default_manifest(&args.out))?;
    let plan = args.plan(&mut run)?;
    run.seed(plan.seed);
    if args.model.is_some() {
        score_model(args, run, plan)
    } else {
        cross_validate(args, run, plan)
    }
}

fn cross_validate(args: EvaluateArgs, mut run: Run, plan: CvPlan) -> Result<()> {
    let meta = args.meta.as_ref().expect("clap requires --meta without --model");
    let cfgs: Vec<_> = args.topics.iter().map(|&k| args.train.config(k, plan.seed)).collect();
    for cfg in &cfgs {
        cfg.validate()?;
    }
    let corpus = load_corpus(&mut run, meta, &args.data, args.lenient)?;
    let rows = run_cv(&corpus, &plan, &cfgs)?;
    let (summaries, best) = summarize(&rows, cfgs.len());

    run.write_with(&args.out, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["topics", "fold", "metric", "error"])?;
        for r in &rows {
            c.write_record([
                args.topics[r.config].to_string(),
                (r.fold + 1).to_string(),
                r.metric.map_or(String::new(), |m| m.to_string()),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let summary_path = args.summary.clone().unwrap_or_else(|| suffixed(&args.out, ".summary.csv"));
    run.write_with(&summary_path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["topics", "mean", "sd", "se", "folds_ok", "best"])?;
        for s in &summaries {
            c.write_record([
                args.topics[s.config].to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.se.to_string(),
                s.folds_ok.to_string(),
                (best == Some(s.config)).to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;

    run.warn("failed_cells", rows.iter().filter(|r| r.error.is_some()).count() as u64);
    run.metric("best_topics", best.map(|b| args.topics[b]))?;
    let table: Vec<_> = summaries
        .iter()
        .map(|s| serde_json::json!({"topics": args.topics[s.config], "mean": s.mean, "se": s.se, "folds_ok": s.folds_ok}))
        .collect();
    run.metric("summary", table)?;
    print_metrics(&run.finish()?)?;
    Ok(())
}

fn score_model(args: EvaluateArgs, mut run: Run, plan: CvPlan) -> Result<()> {
    let model_path = args.model.as_ref().expect("checked by caller");
    let model = load_trained(&mut run, model_path)?;
    let corpus = load_data(&mut run, &args.data, &model.schema, args.lenient)?;
    if corpus.num_patients() == 0 {
        return Err(usage(format!("{} holds no patients", args.data.display())));
    }
    if !(0.0..=1.0).contains(&plan.eval_fraction) {
        return Err(usage("eval fraction must lie in [0, 1]"));
    }
    let est = point_estimates(&model);
    let halves = split_records(&corpus.patients, plan.eval_fraction, plan.seed);
    let score = heldout_predictive_loglik(&est, &halves, plan.infer_sweeps, plan.combiner)?;
    run.metric("heldout_mean", score.mean)?;
    run.metric("heldout_total", score.total)?;
    run.metric("scored_patients", score.scored)?;

    if let Some(truth) = &args.truth {
        run.input(truth)?;
        let targets = read_truth_sidecar(truth, &corpus)?;
        let mixtures = infer_mixtures(&corpus.patients, &est, plan.infer_sweeps);
        run.metric("missing_lab_targets", targets.len())?;
        run.metric("missing_lab_loglik", missing_lab_loglik(&est, &targets, &mixtures, plan.combiner)?)?;
    }

    run.write_with(&args.out, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["patient_id", "loglik"])?;
        for (id, s) in corpus.patient_ids.iter().zip(&score.per_patient) {
            c.write_record([id.to_string(), s.map_or(String::new(), |v| v.to_string())])?;
        }
        c.flush()?;
        Ok(())
    })?;
    print_metrics(&run.finish()?)?;
    Ok(())
}
