use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use mixtopic::cvb::Trainer;
use mixtopic::model_io::{save_model, write_trace_csv};

use super::{default_manifest, load_corpus, load_trained, usage, ModelOpts};
use crate::manifest::{suffixed, Run};

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Schema file listing the feature count of each data type.
    #[arg(long)]
    pub meta: PathBuf,
    /// Sparse data file.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of topics.
    #[arg(long, required_unless_present = "resume")]
    pub topics: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelOpts,
    /// Skip data rows outside the schema instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Continue from a saved model; its configuration is kept and --iters more
    /// sweeps are run.
    #[arg(long, conflicts_with = "topics")]
    pub resume: Option<PathBuf>,
    /// Leave the per-patient checkpoint out of the saved model.
    #[arg(long)]
    pub compact: bool,
    /// Model file to write; the trace goes to `<out>.trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut run = Run::new("train", &args, default_manifest(&args.out))?;
    let previous = match &args.resume {
        Some(path) => Some(load_trained(&mut run, path)?),
        None => None,
    };
    let cfg = match &previous {
        Some(m) => m.config.clone(),
        None => args.model.config(args.topics.unwrap_or(0), args.seed),
    };
    cfg.validate()?;
    run.seed(cfg.seed);

    let corpus = load_corpus(&mut run, &args.meta, &args.data, args.lenient)?;
    if corpus.num_patients() == 0 {
        return Err(usage(format!("{} holds no patients", args.data.display())));
    }
    let mut trainer = match previous {
        Some(m) => Trainer::resume(&corpus, m)?,
        None => Trainer::new(&corpus, &cfg)?,
    };
    let start_iter = trainer.model().iterations;
    trainer.run(args.model.iters)?;
    run.iteration_seconds(trainer.seconds());
    let model = trainer.finish();
    let ran = model.iterations - start_iter;
    log::info!("{} sweeps, final log likelihood {:?}", ran, model.trace.last().map(|e| e.loglik));

    run.metric("variant", model.variant().name())?;
    run.metric("topics", model.topics())?;
    run.metric("iterations", model.iterations)?;
    run.metric("converged", ran < args.model.iters)?;
    run.metric("initial_loglik", model.initial_loglik)?;
    run.metric("final_loglik", model.trace.last().map_or(model.initial_loglik, |e| e.loglik))?;
    run.metric("corpus", corpus.summary())?;

    let model = if args.compact { model.compact() } else { model };
    run.register(&args.out);
    save_model(&model, &args.out)?;
    run.write_with(&suffixed(&args.out, ".trace.csv"), |w| Ok(write_trace_csv(&model.trace, &[], w)?))?;
    run.finish()?;
    Ok(())
}
