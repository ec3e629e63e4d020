use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rand::Rng;
use serde::Serialize;

use mixtopic::rng;
use mixtopic::simulate::{simulate, write_truth_sidecar, SimConfig};

use super::default_manifest;
use crate::manifest::{suffixed, Run};

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// JSON simulation settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also draw a binary outcome per patient whose log-odds rise with the
    /// weight of topic 1, written to `<prefix>.labels.csv`.
    #[arg(long)]
    pub labels: bool,
    /// Writes `<prefix>.meta`, `.data`, `.truth` and `.params.json`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Serialize)]
struct Params<'a> {
    config: &'a SimConfig,
    truth: &'a mixtopic::simulate::GroundTruth,
}

/// Outcome probability, logistic in `-3 + 6 θ_1`.
fn outcome_probability(theta: &[f64]) -> f64 {
    1.0 / (1.0 + (3.0 - 6.0 * theta[0]).exp())
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let mut run = Run::new("simulate", &args, default_manifest(&args.out_prefix))?;
    let mut cfg: SimConfig = match &args.config {
        Some(path) => {
            run.input(path)?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            serde_json::from_reader(BufReader::new(file))
                .map_err(|e| mixtopic::Error::Validation(format!("{}: {e}", path.display())))?
        }
        None => SimConfig::default(),
    };
    if let Some(d) = args.patients {
        cfg.patients = d;
    }
    if let Some(k) = args.topics {
        cfg.topics = k;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    run.seed(cfg.seed);

    let (corpus, truth) = simulate(&cfg)?;
    run.schema(&corpus.schema);
    run.metric("corpus", corpus.summary())?;

    let meta = suffixed(&args.out_prefix, ".meta");
    let data = suffixed(&args.out_prefix, ".data");
    run.register(&meta);
    run.register(&data);
    corpus.save(&meta, &data)?;
    run.write_with(&suffixed(&args.out_prefix, ".truth"), |w| Ok(write_truth_sidecar(&corpus, &truth, w)?))?;
    run.write_with(&suffixed(&args.out_prefix, ".params.json"), |w| {
        serde_json::to_writer(&mut *w, &Params { config: &cfg, truth: &truth })?;
        Ok(())
    })?;
    if args.labels {
        let mut r = rng::stream(cfg.seed, "sim-outcome", 0);
        let labels: Vec<bool> = truth.theta.iter().map(|t| r.random::<f64>() < outcome_probability(t)).collect();
        run.metric("positive_rate", labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64)?;
        run.write_with(&suffixed(&args.out_prefix, ".labels.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["patient_id", "label"])?;
            for (id, l) in corpus.patient_ids.iter().zip(&labels) {
                c.write_record([id.to_string(), (*l as u8).to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    run.finish()?;
    Ok(())
}
