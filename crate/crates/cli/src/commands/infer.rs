use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use mixtopic::estimates::{infer_mixtures, point_estimates, DEFAULT_INFER_SWEEPS};
use mixtopic::model_io::write_mixtures_csv;

use super::{default_manifest, load_data, load_trained};
use crate::manifest::Run;

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data file in the model's schema. Rows outside it are skipped and counted.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_INFER_SWEEPS)]
    pub sweeps: usize,
    /// Mixture CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: InferArgs) -> Result<()> {
    let mut run = Run::new("infer", &args, default_manifest(&args.out))?;
    let model = load_trained(&mut run, &args.model)?;
    let corpus = load_data(&mut run, &args.data, &model.schema, true)?;
    let est = point_estimates(&model);
    let mixtures = infer_mixtures(&corpus.patients, &est, args.sweeps);
    run.metric("patients", corpus.num_patients())?;
    run.write_with(&args.out, |w| Ok(write_mixtures_csv(&corpus.patient_ids, &mixtures, w)?))?;
    run.finish()?;
    Ok(())
}
