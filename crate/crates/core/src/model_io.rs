//! Model container and CSV exports.
//!
//! A model file is one header line `mixtopic-model <version> <sha256> <bytes>`
//! followed by the JSON body. The header lets a reader reject truncated or
//! corrupted files before parsing anything.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cvb::{TraceEntry, TrainedModel};
use crate::error::{Error, Result};
use crate::estimates::{lab_topic_score, PatientMixture, TopicEstimates};

const MAGIC: &str = "mixtopic-model";
pub const FORMAT_VERSION: u32 = 1;

pub fn model_to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(model).map_err(|e| Error::ModelFile(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(&body));
    let mut out = format!("{MAGIC} {FORMAT_VERSION} {digest} {}\n", body.len()).into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::ModelFile("missing header".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::ModelFile("header is not UTF-8".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(Error::ModelFile("not a model file".into()));
    }
    let version: u32 = fields[1].parse().map_err(|_| Error::ModelFile("bad version field".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "version mismatch: file is v{version}, this build reads v{FORMAT_VERSION}"
        )));
    }
    let len: usize = fields[3].parse().map_err(|_| Error::ModelFile("bad length field".into()))?;
    let body = &bytes[newline + 1..];
    if body.len() != len {
        return Err(Error::ModelFile(format!(
            "truncated or padded body: expected {len} bytes, found {}",
            body.len()
        )));
    }
    if hex::encode(Sha256::digest(body)) != fields[2] {
        return Err(Error::ModelFile("checksum mismatch".into()));
    }
    serde_json::from_slice(body).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// `iter,loglik,delta`, plus a `seconds` column when timings are given.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], seconds: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let timed = !seconds.is_empty();
    if timed {
        w.write_record(["iter", "loglik", "delta", "seconds"])?;
    } else {
        w.write_record(["iter", "loglik", "delta"])?;
    }
    for (i, e) in trace.iter().enumerate() {
        let mut row = vec![e.iter.to_string(), e.loglik.to_string(), e.delta.to_string()];
        if timed {
            row.push(seconds.get(i).map_or(String::new(), |s| format!("{s:.6}")));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `topic,type_id,feature_id,weight` for every regular feature (topics 1-based).
pub fn write_topic_csv<W: Write>(est: &TopicEstimates, out: W) -> Result<()> {
    let k = est.topics;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["topic", "type_id", "feature_id", "weight"])?;
    for kk in 0..k {
        for (t, phi) in est.phi.iter().enumerate() {
            let type_id = est.schema.regular_type_id(t);
            for f in 0..phi.len() / k {
                w.write_record([
                    (kk + 1).to_string(),
                    type_id.to_string(),
                    (f + 1).to_string(),
                    phi[f * k + kk].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `topic,lab_id,score` at 0-based result `value`.
pub fn write_lab_score_csv<W: Write>(est: &TopicEstimates, value: usize, out: W) -> Result<()> {
    let scores = lab_topic_score(est, value);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["topic", "lab_id", "score"])?;
    for kk in 0..est.topics {
        for (l, row) in scores.iter().enumerate() {
            w.write_record([(kk + 1).to_string(), (l + 1).to_string(), row[kk].to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `patient_id,theta_1,…,theta_K`.
pub fn write_mixtures_csv<W: Write>(patient_ids: &[i64], mixtures: &[PatientMixture], out: W) -> Result<()> {
    let k = mixtures.first().map_or(0, |m| m.theta.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string()];
    header.extend((1..=k).map(|i| format!("theta_{i}")));
    w.write_record(&header)?;
    for (pid, m) in patient_ids.iter().zip(mixtures) {
        let mut row = vec![pid.to_string()];
        row.extend(m.theta.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_mixtures_csv<R: Read>(input: R) -> Result<(Vec<i64>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(input);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |m: String| Error::Parse { line: i + 2, message: m };
        let pid = rec
            .get(0)
            .ok_or_else(|| parse_err("empty row".into()))?
            .parse::<i64>()
            .map_err(|e| parse_err(e.to_string()))?;
        let theta = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        ids.push(pid);
        rows.push(theta);
    }
    Ok((ids, rows))
}

/// `patient_id,label` with labels 0/1.
pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<(i64, bool)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |m: String| Error::Parse { line: i + 2, message: m };
        if rec.len() != 2 {
            return Err(parse_err(format!("expected 2 fields, found {}", rec.len())));
        }
        let pid = rec[0].trim().parse::<i64>().map_err(|e| parse_err(e.to_string()))?;
        let label = match rec[1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
        };
        out.push((pid, label));
    }
    Ok(out)
}
