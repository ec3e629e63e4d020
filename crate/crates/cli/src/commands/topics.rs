use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use mixtopic::downstream::{top_predictive_topics, L1Model, RankedTopic};
use mixtopic::estimates::{point_estimates, top_features, TopicReport};
use mixtopic::model_io::{write_lab_score_csv, write_topic_csv};

use super::{default_manifest, load_trained, usage};
use crate::manifest::{suffixed, Run};

#[derive(Args, Debug, Serialize)]
pub struct TopicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Entries listed per data type and topic.
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Lab value (1-based) whose topic scores rank the labs.
    #[arg(long, default_value_t = 1)]
    pub value: usize,
    /// Fitted L1 model (`.l1.json` from predict); adds `<out>.predictive.csv`
    /// with the most positive and negative topics.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// Topics listed per sign with --predictor.
    #[arg(long, default_value_t = 5)]
    pub predictive_n: usize,
    /// Also write every feature weight (`topic,type_id,feature_id,weight`).
    #[arg(long)]
    pub phi: Option<PathBuf>,
    /// Also write every lab score (`topic,lab_id,score`).
    #[arg(long)]
    pub lab_scores: Option<PathBuf>,
    /// Long-format report: `topic,kind,type_id,id,rank,weight`.
    #[arg(long)]
    pub out: PathBuf,
}

fn report_rows(c: &mut csv::Writer<impl std::io::Write>, r: &TopicReport, lab_type: Option<u32>) -> Result<()> {
    let topic = (r.topic + 1).to_string();
    for (ty, feats) in &r.features {
        for (rank, (id, w)) in feats.iter().enumerate() {
            c.write_record([&topic, "feature", &ty.to_string(), &id.to_string(), &(rank + 1).to_string(), &w.to_string()])?;
        }
    }
    let lt = lab_type.map_or(String::new(), |t| t.to_string());
    for (rank, (id, s)) in r.labs.iter().enumerate() {
        c.write_record([&topic, "lab", &lt, &id.to_string(), &(rank + 1).to_string(), &s.to_string()])?;
    }
    Ok(())
}

pub fn run(args: TopicsArgs) -> Result<()> {
    let mut run = Run::new("topics", &args, default_manifest(&args.out))?;
    let model = load_trained(&mut run, &args.model)?;
    let est = point_estimates(&model);
    if args.value == 0 {
        return Err(usage("lab values are numbered from 1"));
    }
    let value = args.value - 1;
    let lab_type = est.schema.lab_type_id();

    let predictor: Option<L1Model> = match &args.predictor {
        Some(path) => {
            run.input(path)?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let m: L1Model = serde_json::from_reader(BufReader::new(file))
                .map_err(|e| mixtopic::Error::Validation(format!("{}: {e}", path.display())))?;
            if m.weights.len() != est.topics {
                return Err(usage(format!("predictor has {} weights for {} topics", m.weights.len(), est.topics)));
            }
            Some(m)
        }
        None => None,
    };

    run.write_with(&args.out, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["topic", "kind", "type_id", "id", "rank", "weight"])?;
        for k in 0..est.topics {
            report_rows(&mut c, &top_features(&est, k, args.top_n, value), lab_type)?;
        }
        c.flush()?;
        Ok(())
    })?;

    if let Some(l1) = &predictor {
        let ranked = top_predictive_topics(l1, &est, args.predictive_n, args.top_n, value);
        let summary = |v: &[RankedTopic]| v.iter().map(|r| (r.topic + 1, r.weight)).collect::<Vec<_>>();
        run.metric("positive_topics", summary(&ranked.positive))?;
        run.metric("negative_topics", summary(&ranked.negative))?;
        run.write_with(&suffixed(&args.out, ".predictive.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["sign", "rank", "topic", "weight"])?;
            for (sign, list) in [("positive", &ranked.positive), ("negative", &ranked.negative)] {
                for (i, r) in list.iter().enumerate() {
                    c.write_record([sign, &(i + 1).to_string(), &(r.topic + 1).to_string(), &r.weight.to_string()])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
    }
    if let Some(path) = &args.phi {
        run.write_with(path, |w| Ok(write_topic_csv(&est, w)?))?;
    }
    if let Some(path) = &args.lab_scores {
        run.write_with(path, |w| Ok(write_lab_score_csv(&est, value, w)?))?;
    }
    run.finish()?;
    Ok(())
}
