pub mod evaluate;
pub mod infer;
pub mod predict;
pub mod replay;
pub mod simulate;
pub mod summary;
pub mod topics;
pub mod train;

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use mixtopic::corpus::{parse_corpus, parse_corpus_lenient, parse_meta, Corpus, Schema};
use mixtopic::cvb::{TrainConfig, TrainedModel, DEFAULT_HYPER_BURN_IN};
use mixtopic::model_io::{load_model, read_labels_csv};
use mixtopic::Error;

use crate::manifest::{Run, RunManifest};

/// Training options shared by every command that fits a topic model.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelOpts {
    /// Maximum training sweeps.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Relative log-likelihood change that ends training.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Treat untaken labs as missing at random.
    #[arg(long, overrides_with = "nmar")]
    pub mar: bool,
    /// Model lab missingness as informative (default).
    #[arg(long, overrides_with = "mar")]
    pub nmar: bool,
    /// Use only the lab channel.
    #[arg(long, overrides_with = "mixview")]
    pub labs_only: bool,
    /// Use every data type (default).
    #[arg(long, overrides_with = "labs_only")]
    pub mixview: bool,
    /// Hyperparameter update stride in sweeps; 0 keeps them fixed.
    #[arg(long, default_value_t = 1)]
    pub hyper_every: usize,
    /// Sweeps before the first hyperparameter update.
    #[arg(long, default_value_t = DEFAULT_HYPER_BURN_IN)]
    pub burn_in: usize,
    /// Patient shards per sweep. Results depend on this, not on --threads.
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
}

impl ModelOpts {
    pub fn config(&self, topics: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            topics,
            max_iters: self.iters,
            tol: self.tol,
            seed,
            nmar: !self.mar,
            mixview: !self.labs_only,
            hyper_update_every: self.hyper_every,
            hyper_burn_in: self.burn_in,
            shards: self.shards,
            ..Default::default()
        }
    }
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

pub fn load_schema(run: &mut Run, meta: &Path) -> Result<Schema> {
    run.input(meta)?;
    let schema = parse_meta(meta)?;
    run.schema(&schema);
    Ok(schema)
}

/// Reads a data file against `schema`. Lenient parsing skips and counts rows
/// outside the schema instead of failing.
pub fn load_data(run: &mut Run, data: &Path, schema: &Schema, lenient: bool) -> Result<Corpus> {
    run.input(data)?;
    let corpus = if lenient {
        let (corpus, skipped) = parse_corpus_lenient(data, schema)?;
        run.warn("skipped_rows", skipped as u64);
        corpus
    } else {
        parse_corpus(data, schema)?
    };
    let s = corpus.summary();
    log::info!(
        "{} patients, {} features in {} types, {} tokens, {} labs observed at rate {:.3}",
        s.patients,
        s.total_features,
        s.regular_types,
        s.total_tokens,
        s.labs,
        s.lab_observation_rate
    );
    Ok(corpus)
}

pub fn load_corpus(run: &mut Run, meta: &Path, data: &Path, lenient: bool) -> Result<Corpus> {
    let schema = load_schema(run, meta)?;
    load_data(run, data, &schema, lenient)
}

pub fn load_trained(run: &mut Run, path: &Path) -> Result<TrainedModel> {
    run.input(path)?;
    let model = load_model(path)?;
    run.schema(&model.schema);
    Ok(model)
}

/// Labels aligned to `ids`. Every id needs a label; extra labels are counted.
pub fn load_labels(run: &mut Run, path: &Path, ids: &[i64]) -> Result<Vec<bool>> {
    run.input(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let pairs = read_labels_csv(file)?;
    let mut by_id = HashMap::with_capacity(pairs.len());
    for (id, label) in pairs {
        if by_id.insert(id, label).is_some() {
            return Err(usage(format!("patient {id} is labelled twice in {}", path.display())));
        }
    }
    let labels = ids
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| usage(format!("no label for patient {id}"))))
        .collect::<Result<Vec<_>>>()?;
    run.warn("unused_labels", by_id.len().saturating_sub(ids.len()) as u64);
    Ok(labels)
}

/// Prints a run's metrics as JSON. A closed stdout is not an error; the
/// outputs are already committed by then.
pub fn print_metrics(manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(&manifest.metrics)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn default_manifest(out: &Path) -> PathBuf {
    crate::manifest::suffixed(out, ".manifest.json")
}
