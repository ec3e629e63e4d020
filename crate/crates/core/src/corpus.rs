//! Sparse heterogeneous patient records and the on-disk text format.
//!
//! A corpus is described by two whitespace-separated text files. The meta
//! file lists `type_id feature_id state_count`; every type whose features
//! carry `state_count >= 2` is the lab type, whose features are lab tests
//! with that many result values. The data file lists
//! `patient_id type_id feature_id state_id count`. Ids are 1-based on disk and
//! dense 0-based in memory.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeKind {
    Regular,
    Lab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSchema {
    pub type_id: u32,
    pub feature_count: usize,
    pub kind: TypeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabSchema {
    pub lab_id: u32,
    pub value_count: usize,
}

/// All data types of a corpus, plus the per-test value counts of the lab type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub types: Vec<TypeSchema>,
    pub labs: Vec<LabSchema>,
}

/// Where a 1-based `type_id` lands in the dense layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeSlot {
    Regular(usize),
    Lab,
}

impl Schema {
    /// Builds a schema from regular feature counts and lab value counts.
    /// Regular types get ids `1..=T`, the lab type (if any) gets `T + 1`.
    pub fn new(regular_feature_counts: &[usize], lab_value_counts: &[usize]) -> Result<Self> {
        let mut types: Vec<TypeSchema> = regular_feature_counts
            .iter()
            .enumerate()
            .map(|(t, &w)| TypeSchema {
                type_id: t as u32 + 1,
                feature_count: w,
                kind: TypeKind::Regular,
            })
            .collect();
        if !lab_value_counts.is_empty() {
            types.push(TypeSchema {
                type_id: types.len() as u32 + 1,
                feature_count: lab_value_counts.len(),
                kind: TypeKind::Lab,
            });
        }
        let labs = lab_value_counts
            .iter()
            .enumerate()
            .map(|(l, &v)| LabSchema {
                lab_id: l as u32 + 1,
                value_count: v,
            })
            .collect();
        let schema = Schema { types, labs };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Schema("no types defined".into()));
        }
        for (i, ty) in self.types.iter().enumerate() {
            if ty.type_id as usize != i + 1 {
                return Err(Error::Schema(format!(
                    "type ids must be contiguous from 1, found {} at position {}",
                    ty.type_id,
                    i + 1
                )));
            }
            if ty.feature_count == 0 {
                return Err(Error::Schema(format!("type {} has no features", ty.type_id)));
            }
        }
        let lab_types: Vec<_> = self.types.iter().filter(|t| t.kind == TypeKind::Lab).collect();
        match lab_types.as_slice() {
            [] if !self.labs.is_empty() => {
                return Err(Error::Schema("lab schemas given without a lab type".into()))
            }
            [] => {}
            [lab] => {
                if lab.feature_count != self.labs.len() {
                    return Err(Error::Schema(format!(
                        "lab type {} declares {} tests but {} lab schemas are present",
                        lab.type_id,
                        lab.feature_count,
                        self.labs.len()
                    )));
                }
            }
            _ => return Err(Error::Schema("more than one lab type".into())),
        }
        for (i, lab) in self.labs.iter().enumerate() {
            if lab.lab_id as usize != i + 1 {
                return Err(Error::Schema(format!(
                    "lab ids must be contiguous from 1, found {} at position {}",
                    lab.lab_id,
                    i + 1
                )));
            }
            if lab.value_count < 2 {
                return Err(Error::Schema(format!(
                    "lab {} must have at least 2 values, has {}",
                    lab.lab_id, lab.value_count
                )));
            }
        }
        Ok(())
    }

    /// Feature counts `W_t` of the regular types, in type-id order.
    pub fn regular_feature_counts(&self) -> Vec<usize> {
        self.types
            .iter()
            .filter(|t| t.kind == TypeKind::Regular)
            .map(|t| t.feature_count)
            .collect()
    }

    pub fn lab_value_counts(&self) -> Vec<usize> {
        self.labs.iter().map(|l| l.value_count).collect()
    }

    pub fn num_regular_types(&self) -> usize {
        self.types.iter().filter(|t| t.kind == TypeKind::Regular).count()
    }

    pub fn num_labs(&self) -> usize {
        self.labs.len()
    }

    pub fn lab_type_id(&self) -> Option<u32> {
        self.types.iter().find(|t| t.kind == TypeKind::Lab).map(|t| t.type_id)
    }

    /// 1-based type id of the `t`-th regular type.
    pub fn regular_type_id(&self, t: usize) -> u32 {
        self.types
            .iter()
            .filter(|ty| ty.kind == TypeKind::Regular)
            .nth(t)
            .map(|ty| ty.type_id)
            .expect("regular type index out of range")
    }

    pub fn slot(&self, type_id: u32) -> Option<TypeSlot> {
        let mut regular = 0;
        for ty in &self.types {
            if ty.type_id == type_id {
                return Some(match ty.kind {
                    TypeKind::Regular => TypeSlot::Regular(regular),
                    TypeKind::Lab => TypeSlot::Lab,
                });
            }
            if ty.kind == TypeKind::Regular {
                regular += 1;
            }
        }
        None
    }

    /// Canonical meta-file text.
    pub fn to_meta_string(&self) -> String {
        let mut out = String::new();
        for ty in &self.types {
            for f in 0..ty.feature_count {
                let states = match ty.kind {
                    TypeKind::Regular => 1,
                    TypeKind::Lab => self.labs[f].value_count,
                };
                out.push_str(&format!("{} {} {}\n", ty.type_id, f + 1, states));
            }
        }
        out
    }

    /// SHA-256 of the canonical meta text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_meta_string().as_bytes()))
    }
}

/// One distinct regular feature of a patient with its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Dense regular-type index.
    pub ty: usize,
    /// Dense feature index within the type.
    pub feature: usize,
    pub count: u32,
}

/// An observed lab test: the counts of each result value seen for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabResult {
    pub lab: usize,
    /// `(value index, count)`, sorted by value, counts ≥ 1.
    pub values: Vec<(usize, u32)>,
}

impl LabResult {
    pub fn total(&self) -> u32 {
        self.values.iter().map(|&(_, c)| c).sum()
    }
}

/// A patient's record in dense form.
///
/// `missing` lists labs known to be untaken. Labs that appear in neither
/// `observed` nor `missing` carry no information (used for held-out splits).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub tokens: Vec<Token>,
    pub observed: Vec<LabResult>,
    pub missing: Vec<usize>,
}

impl PatientRecord {
    pub fn total_tokens(&self) -> u64 {
        self.tokens.iter().map(|t| t.count as u64).sum()
    }

    /// `M_j^(t)`: total token count under regular type `ty`.
    pub fn tokens_of_type(&self, ty: usize) -> u64 {
        self.tokens.iter().filter(|t| t.ty == ty).map(|t| t.count as u64).sum()
    }

    pub fn total_lab_count(&self) -> u64 {
        self.observed.iter().map(|l| l.total() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty() && self.observed.is_empty() && self.missing.is_empty()
    }

    /// `r_lj`: 1 iff the lab has at least one observed result.
    pub fn is_observed(&self, lab: usize) -> bool {
        self.observed.iter().any(|o| o.lab == lab && o.total() >= 1)
    }
}

/// Flat on-disk view of a regular token row (1-based ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegularToken {
    pub patient_id: i64,
    pub type_id: u32,
    pub feature_id: u32,
    pub count: u32,
}

/// Flat on-disk view of a lab row (1-based ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabObservation {
    pub patient_id: i64,
    pub lab_id: u32,
    pub value: u32,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub schema: Schema,
    /// External patient ids, indexed by dense patient index.
    pub patient_ids: Vec<i64>,
    pub patients: Vec<PatientRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub patients: usize,
    pub regular_types: usize,
    pub labs: usize,
    pub total_features: usize,
    pub token_entries: usize,
    pub total_tokens: u64,
    pub lab_entries: usize,
    pub total_lab_count: u64,
    pub lab_observation_rate: f64,
}

impl Corpus {
    pub fn empty(schema: Schema) -> Self {
        Corpus {
            schema,
            patient_ids: Vec::new(),
            patients: Vec::new(),
        }
    }

    /// Assembles a corpus from dense records, filling in each record's
    /// `missing` list as the complement of its observed labs.
    pub fn from_records(schema: Schema, patient_ids: Vec<i64>, mut patients: Vec<PatientRecord>) -> Result<Self> {
        if patient_ids.len() != patients.len() {
            return Err(Error::Validation("patient id count does not match record count".into()));
        }
        let w = schema.regular_feature_counts();
        let v = schema.lab_value_counts();
        for rec in &mut patients {
            rec.tokens.retain(|t| t.count > 0);
            rec.tokens.sort_by_key(|t| (t.ty, t.feature));
            for t in &rec.tokens {
                if t.ty >= w.len() || t.feature >= w[t.ty] {
                    return Err(Error::Validation(format!("token ({}, {}) outside schema", t.ty, t.feature)));
                }
            }
            rec.observed.retain(|o| o.total() > 0);
            rec.observed.sort_by_key(|o| o.lab);
            for o in &rec.observed {
                if o.lab >= v.len() || o.values.iter().any(|&(x, _)| x >= v[o.lab]) {
                    return Err(Error::Validation(format!("lab {} outside schema", o.lab)));
                }
            }
            rec.missing = missing_complement(&rec.observed, v.len());
        }
        Ok(Corpus {
            schema,
            patient_ids,
            patients,
        })
    }

    pub fn num_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.patients.iter().map(|p| p.total_tokens()).sum()
    }

    pub fn regular_tokens(&self) -> impl Iterator<Item = RegularToken> + '_ {
        self.patients.iter().zip(&self.patient_ids).flat_map(move |(rec, &pid)| {
            rec.tokens.iter().map(move |t| RegularToken {
                patient_id: pid,
                type_id: self.schema.regular_type_id(t.ty),
                feature_id: t.feature as u32 + 1,
                count: t.count,
            })
        })
    }

    pub fn lab_observations(&self) -> impl Iterator<Item = LabObservation> + '_ {
        self.patients.iter().zip(&self.patient_ids).flat_map(|(rec, &pid)| {
            rec.observed.iter().flat_map(move |o| {
                o.values.iter().map(move |&(v, c)| LabObservation {
                    patient_id: pid,
                    lab_id: o.lab as u32 + 1,
                    value: v as u32 + 1,
                    count: c,
                })
            })
        })
    }

    /// Patients at the given dense indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            schema: self.schema.clone(),
            patient_ids: indices.iter().map(|&i| self.patient_ids[i]).collect(),
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
        }
    }

    pub fn summary(&self) -> CorpusSummary {
        let d = self.patients.len();
        let l = self.schema.num_labs();
        let observed_pairs: usize = self.patients.iter().map(|p| p.observed.len()).sum();
        CorpusSummary {
            patients: d,
            regular_types: self.schema.num_regular_types(),
            labs: l,
            total_features: self.schema.regular_feature_counts().iter().sum(),
            token_entries: self.patients.iter().map(|p| p.tokens.len()).sum(),
            total_tokens: self.total_tokens(),
            lab_entries: self.patients.iter().map(|p| p.observed.iter().map(|o| o.values.len()).sum::<usize>()).sum(),
            total_lab_count: self.patients.iter().map(|p| p.total_lab_count()).sum(),
            lab_observation_rate: if d * l == 0 {
                0.0
            } else {
                observed_pairs as f64 / (d * l) as f64
            },
        }
    }

    /// Writes the data file. Rows follow patient order, then tokens, then labs.
    pub fn write_data<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let lab_type = self.schema.lab_type_id();
        for (rec, &pid) in self.patients.iter().zip(&self.patient_ids) {
            for t in &rec.tokens {
                writeln!(out, "{} {} {} 1 {}", pid, self.schema.regular_type_id(t.ty), t.feature + 1, t.count)?;
            }
            if let Some(lt) = lab_type {
                for o in &rec.observed {
                    for &(v, c) in &o.values {
                        writeln!(out, "{} {} {} {} {}", pid, lt, o.lab + 1, v + 1, c)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, meta_path: &Path, data_path: &Path) -> Result<()> {
        std::fs::write(meta_path, self.schema.to_meta_string()).map_err(|e| Error::io(meta_path, e))?;
        let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_data(&mut buf).map_err(|e| Error::io(data_path, e))?;
        buf.flush().map_err(|e| Error::io(data_path, e))
    }
}

pub(crate) fn missing_complement(observed: &[LabResult], num_labs: usize) -> Vec<usize> {
    let mut seen = vec![false; num_labs];
    for o in observed {
        seen[o.lab] = true;
    }
    (0..num_labs).filter(|&l| !seen[l]).collect()
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| match l {
            Ok(s) => {
                let s = s.trim();
                !s.is_empty() && !s.starts_with('#')
            }
            Err(_) => true,
        })
}

fn parse_fields(line: &str, lineno: usize, expected: usize) -> Result<Vec<i64>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<i64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not an integer: {f:?}"),
            })
        })
        .collect()
}

pub fn parse_meta_from<R: BufRead>(reader: R) -> Result<Schema> {
    // type_id -> feature_id -> state_count
    let mut types: BTreeMap<i64, BTreeMap<i64, i64>> = BTreeMap::new();
    for (lineno, line) in data_lines(reader) {
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let f = parse_fields(&line, lineno, 3)?;
        let (type_id, feature_id, states) = (f[0], f[1], f[2]);
        if type_id < 1 || feature_id < 1 || states < 1 {
            return Err(Error::Parse {
                line: lineno,
                message: "ids and state counts must be positive".into(),
            });
        }
        if types.entry(type_id).or_default().insert(feature_id, states).is_some() {
            return Err(Error::Schema(format!(
                "duplicate (type, feature) = ({type_id}, {feature_id}) at line {lineno}"
            )));
        }
    }
    if types.is_empty() {
        return Err(Error::Schema("no types defined".into()));
    }

    let mut schema_types = Vec::with_capacity(types.len());
    let mut labs = Vec::new();
    for (pos, (&type_id, features)) in types.iter().enumerate() {
        if type_id as usize != pos + 1 {
            return Err(Error::Schema(format!("type ids are not contiguous from 1 (missing {})", pos + 1)));
        }
        for (i, &feature_id) in features.keys().enumerate() {
            if feature_id as usize != i + 1 {
                return Err(Error::Schema(format!(
                    "feature ids of type {type_id} are not contiguous from 1 (missing {})",
                    i + 1
                )));
            }
        }
        let is_lab = features.values().any(|&s| s >= 2);
        if is_lab {
            if !labs.is_empty() {
                return Err(Error::Schema("two lab-kind types".into()));
            }
            if let Some((f, _)) = features.iter().find(|(_, &s)| s < 2) {
                return Err(Error::Schema(format!(
                    "lab type {type_id} feature {f} has fewer than 2 states"
                )));
            }
            labs = features
                .iter()
                .map(|(&f, &s)| LabSchema {
                    lab_id: f as u32,
                    value_count: s as usize,
                })
                .collect();
        }
        schema_types.push(TypeSchema {
            type_id: type_id as u32,
            feature_count: features.len(),
            kind: if is_lab { TypeKind::Lab } else { TypeKind::Regular },
        });
    }
    let schema = Schema {
        types: schema_types,
        labs,
    };
    schema.validate()?;
    Ok(schema)
}

pub fn parse_meta(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_meta_from(BufReader::new(file))
}

/// How out-of-schema rows are treated during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Any out-of-range id is a validation error.
    Strict,
    /// Rows with unknown types, features, labs or values are skipped and counted.
    SkipUnknown,
}

#[derive(Default)]
struct PatientAccumulator {
    tokens: BTreeMap<(usize, usize), u32>,
    labs: BTreeMap<(usize, usize), u32>,
}

/// Parses a data file. Returns the corpus and the number of skipped rows
/// (always 0 under [`Strictness::Strict`]).
pub fn parse_corpus_from<R: BufRead>(reader: R, schema: &Schema, strictness: Strictness) -> Result<(Corpus, usize)> {
    let w = schema.regular_feature_counts();
    let v = schema.lab_value_counts();
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut ids = Vec::new();
    let mut acc: Vec<PatientAccumulator> = Vec::new();
    let mut skipped = 0usize;

    for (lineno, line) in data_lines(reader) {
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let f = parse_fields(&line, lineno, 5)?;
        let (pid, type_id, feature_id, state_id, count) = (f[0], f[1], f[2], f[3], f[4]);
        if count <= 0 {
            return Err(Error::Validation(format!("line {lineno}: count must be positive, got {count}")));
        }
        if count > u32::MAX as i64 {
            return Err(Error::Validation(format!("line {lineno}: count {count} too large")));
        }
        let slot = u32::try_from(type_id).ok().and_then(|t| schema.slot(t));
        let key = match slot {
            Some(TypeSlot::Regular(t)) if feature_id >= 1 && feature_id as usize <= w[t] && state_id == 1 => {
                Some((true, t, feature_id as usize - 1))
            }
            Some(TypeSlot::Lab)
                if feature_id >= 1
                    && feature_id as usize <= v.len()
                    && state_id >= 1
                    && state_id as usize <= v[feature_id as usize - 1] =>
            {
                Some((false, feature_id as usize - 1, state_id as usize - 1))
            }
            _ => None,
        };
        let Some((regular, a, b)) = key else {
            match strictness {
                Strictness::Strict => {
                    return Err(Error::Validation(format!(
                        "line {lineno}: row ({pid} {type_id} {feature_id} {state_id}) is outside the schema"
                    )))
                }
                Strictness::SkipUnknown => {
                    skipped += 1;
                    continue;
                }
            }
        };
        let j = *index.entry(pid).or_insert_with(|| {
            ids.push(pid);
            acc.push(PatientAccumulator::default());
            ids.len() - 1
        });
        let slot = if regular {
            acc[j].tokens.entry((a, b)).or_insert(0)
        } else {
            acc[j].labs.entry((a, b)).or_insert(0)
        };
        *slot = slot
            .checked_add(count as u32)
            .ok_or_else(|| Error::Validation(format!("line {lineno}: merged count overflows")))?;
    }

    let patients = acc
        .into_iter()
        .map(|a| {
            let tokens = a
                .tokens
                .into_iter()
                .map(|((ty, feature), count)| Token { ty, feature, count })
                .collect();
            let mut observed: Vec<LabResult> = Vec::new();
            for ((lab, value), count) in a.labs {
                match observed.last_mut() {
                    Some(last) if last.lab == lab => last.values.push((value, count)),
                    _ => observed.push(LabResult {
                        lab,
                        values: vec![(value, count)],
                    }),
                }
            }
            let missing = missing_complement(&observed, v.len());
            PatientRecord {
                tokens,
                observed,
                missing,
            }
        })
        .collect();

    Ok((
        Corpus {
            schema: schema.clone(),
            patient_ids: ids,
            patients,
        },
        skipped,
    ))
}

pub fn parse_corpus(path: impl AsRef<Path>, schema: &Schema) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus_from(BufReader::new(file), schema, Strictness::Strict)?.0)
}

/// Like [`parse_corpus`] but skips rows outside the schema, returning how many.
pub fn parse_corpus_lenient(path: impl AsRef<Path>, schema: &Schema) -> Result<(Corpus, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_from(BufReader::new(file), schema, Strictness::SkipUnknown)
}
