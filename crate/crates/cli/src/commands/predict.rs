use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use mixtopic::downstream::{
    embedding_cv, fit_with_choice, mortality_cv, prospective_eval, write_coefficients_csv, write_curve_csv,
    write_predictions_csv, FitOptions, L1Model, LambdaChoice, Loss, MortalityPlan, MortalityResult, RocPr,
};
use mixtopic::estimates::{infer_mixtures, point_estimates, TopicEstimates, DEFAULT_INFER_SWEEPS};
use mixtopic::model_io::{read_mixtures_csv, save_model};
use mixtopic::cvb::train;

use super::{default_manifest, load_corpus, load_data, load_labels, load_trained, print_metrics, usage, ModelOpts};
use crate::manifest::{suffixed, Run};

/// `auto` for nested cross-validation, or a fixed penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LambdaArg {
    Auto,
    Fixed(f64),
}

impl FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(LambdaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(x) if x >= 0.0 && x.is_finite() => Ok(LambdaArg::Fixed(x)),
            _ => Err(format!("expected `auto` or a non-negative number, got {s:?}")),
        }
    }
}

fn parse_loss(s: &str) -> Result<Loss, String> {
    match s {
        "logistic" => Ok(Loss::Logistic),
        "squared" => Ok(Loss::Squared),
        _ => Err(format!("expected logistic or squared, got {s:?}")),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    /// Precomputed mixtures (`patient_id,theta_1,..`).
    #[arg(long, conflicts_with_all = ["model", "meta", "data"])]
    pub embeddings: Option<PathBuf>,
    /// Trained topic model; mixtures are inferred for --data.
    #[arg(long, conflicts_with_all = ["meta", "topics"])]
    pub model: Option<PathBuf>,
    /// Schema file; with --data and --topics the topic model is retrained
    /// inside every fold.
    #[arg(long, requires_all = ["data", "topics"])]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<usize>,
    /// Outcome labels (`patient_id,label` with 0/1 labels).
    #[arg(long)]
    pub labels: PathBuf,
    /// Earlier records of the patients to score prospectively with a model fitted on all training patients.
    #[arg(long, requires = "test_labels")]
    pub test_data: Option<PathBuf>,
    #[arg(long, requires = "test_data")]
    pub test_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// `auto` or a fixed L1 penalty.
    #[arg(long, default_value = "auto")]
    pub lambda: LambdaArg,
    /// Penalties tried by `--lambda auto`.
    #[arg(long, default_value_t = 20)]
    pub path_len: usize,
    /// Inner folds used by `--lambda auto`.
    #[arg(long, default_value_t = 5)]
    pub inner_folds: usize,
    /// logistic or squared.
    #[arg(long, default_value = "logistic", value_parser = parse_loss)]
    pub loss: Loss,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_INFER_SWEEPS)]
    pub sweeps: usize,
    #[arg(long)]
    pub lenient: bool,
    #[command(flatten)]
    pub train: ModelOpts,
    /// Writes `<prefix>.predictions.csv`, `.roc.csv`, `.pr.csv`,
    /// `.coefficients.csv` and `.l1.json`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

impl PredictArgs {
    fn plan(&self) -> MortalityPlan {
        MortalityPlan {
            folds: self.folds,
            seed: self.seed,
            infer_sweeps: self.sweeps,
            lambda: self.choice(),
            fit: FitOptions {
                loss: self.loss,
                ..Default::default()
            },
        }
    }

    fn choice(&self) -> LambdaChoice {
        match self.lambda {
            LambdaArg::Auto => LambdaChoice::NestedCv {
                path_len: self.path_len,
                folds: self.inner_folds,
            },
            LambdaArg::Fixed(x) => LambdaChoice::Fixed(x),
        }
    }

    fn out(&self, suffix: &str) -> PathBuf {
        suffixed(&self.out_prefix, suffix)
    }
}

fn read_embeddings(run: &mut Run, path: &Path) -> Result<(Vec<i64>, Vec<Vec<f64>>)> {
    run.input(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (ids, x) = read_mixtures_csv(file)?;
    if x.is_empty() {
        return Err(usage(format!("{} holds no rows", path.display())));
    }
    Ok((ids, x))
}

fn write_result(run: &mut Run, args: &PredictArgs, ids: &[i64], res: &MortalityResult) -> Result<()> {
    run.metric("auroc", res.metrics.auroc)?;
    run.metric("auprc", res.metrics.auprc)?;
    run.metric("fold_lambdas", res.fold_models.iter().map(|m| m.lambda).collect::<Vec<_>>())?;
    run.write_with(&args.out(".predictions.csv"), |w| Ok(write_predictions_csv(ids, &res.scores, &res.labels, w)?))?;
    write_curves(run, args, "", &res.metrics)
}

fn write_curves(run: &mut Run, args: &PredictArgs, tag: &str, m: &RocPr) -> Result<()> {
    run.write_with(&args.out(&format!("{tag}.roc.csv")), |w| Ok(write_curve_csv(["fpr", "tpr"], &m.roc, w)?))?;
    run.write_with(&args.out(&format!("{tag}.pr.csv")), |w| Ok(write_curve_csv(["recall", "precision"], &m.pr, w)?))?;
    Ok(())
}

fn write_final(run: &mut Run, args: &PredictArgs, model: &L1Model) -> Result<()> {
    run.metric("final_lambda", model.lambda)?;
    run.metric("nonzero_weights", model.weights.iter().filter(|w| **w != 0.0).count())?;
    run.write_with(&args.out(".coefficients.csv"), |w| Ok(write_coefficients_csv(model, w)?))?;
    run.write_with(&args.out(".l1.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, model)?;
        Ok(())
    })
}

fn prospective(run: &mut Run, args: &PredictArgs, est: &TopicEstimates, l1: &L1Model) -> Result<()> {
    let (Some(data), Some(labels)) = (&args.test_data, &args.test_labels) else {
        return Ok(());
    };
    let early = load_data(run, data, &est.schema, args.lenient)?;
    let y = load_labels(run, labels, &early.patient_ids)?;
    let (scores, metrics) = prospective_eval(est, l1, &early.patients, &y, args.sweeps)?;
    run.metric("prospective_auroc", metrics.auroc)?;
    run.metric("prospective_auprc", metrics.auprc)?;
    run.write_with(&args.out(".prospective.predictions.csv"), |w| {
        Ok(write_predictions_csv(&early.patient_ids, &scores, &y, w)?)
    })?;
    write_curves(run, args, ".prospective", &metrics)
}

pub fn run(args: PredictArgs) -> Result<()> {
    let mut run = Run::new("predict", &args, default_manifest(&args.out_prefix))?;
    run.seed(args.seed);
    let plan = args.plan();

    if let Some(path) = &args.embeddings {
        if args.test_data.is_some() {
            return Err(usage("prospective scoring needs a topic model, not precomputed mixtures"));
        }
        let (ids, x) = read_embeddings(&mut run, path)?;
        let y = load_labels(&mut run, &args.labels, &ids)?;
        let res = embedding_cv(&x, &y, &plan)?;
        write_result(&mut run, &args, &ids, &res)?;
        write_final(&mut run, &args, &fit_with_choice(&x, &y, plan.lambda, args.seed, &plan.fit)?)?;
    } else if let Some(path) = &args.model {
        let data = args.data.as_ref().ok_or_else(|| usage("--model needs --data"))?;
        let model = load_trained(&mut run, path)?;
        let corpus = load_data(&mut run, data, &model.schema, args.lenient)?;
        let y = load_labels(&mut run, &args.labels, &corpus.patient_ids)?;
        let est = point_estimates(&model);
        let x: Vec<Vec<f64>> = infer_mixtures(&corpus.patients, &est, args.sweeps).into_iter().map(|m| m.theta).collect();
        let res = embedding_cv(&x, &y, &plan)?;
        write_result(&mut run, &args, &corpus.patient_ids, &res)?;
        let l1 = fit_with_choice(&x, &y, plan.lambda, args.seed, &plan.fit)?;
        write_final(&mut run, &args, &l1)?;
        prospective(&mut run, &args, &est, &l1)?;
    } else if let Some(meta) = &args.meta {
        let data = args.data.as_ref().expect("clap requires --data with --meta");
        let cfg = args.train.config(args.topics.expect("clap requires --topics with --meta"), args.seed);
        cfg.validate()?;
        let corpus = load_corpus(&mut run, meta, data, args.lenient)?;
        let y = load_labels(&mut run, &args.labels, &corpus.patient_ids)?;
        let res = mortality_cv(&corpus, &y, &cfg, &plan)?;
        write_result(&mut run, &args, &corpus.patient_ids, &res)?;

        // The deliverable model: topics and L1 fitted on every patient.
        let model = train(&corpus, &cfg)?.compact();
        let est = point_estimates(&model);
        let x: Vec<Vec<f64>> = infer_mixtures(&corpus.patients, &est, args.sweeps).into_iter().map(|m| m.theta).collect();
        let l1 = fit_with_choice(&x, &y, plan.lambda, args.seed, &plan.fit)?;
        let model_path = args.out(".model");
        run.register(&model_path);
        save_model(&model, &model_path)?;
        write_final(&mut run, &args, &l1)?;
        prospective(&mut run, &args, &est, &l1)?;
    } else {
        return Err(usage("give --embeddings, --model with --data, or --meta with --data and --topics"));
    }

    print_metrics(&run.finish()?)?;
    Ok(())
}
