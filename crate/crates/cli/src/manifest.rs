//! Run manifests and the output guard that removes partial results.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mixtopic::corpus::Schema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Command line after the program name, as given.
    pub args: Vec<String>,
    /// Every flag after defaults were applied.
    pub flags: serde_json::Value,
    pub cwd: PathBuf,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub version: String,
    pub schema_hash: Option<String>,
    pub warnings: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub wall_seconds: f64,
    /// Per-sweep training time; kept here so the trace file stays reproducible.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iteration_seconds: Vec<f64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `path` with `suffix` appended to its file name.
pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// One CLI invocation. Outputs are registered before they are written; unless
/// [`Run::finish`] succeeds, every registered file is deleted on drop.
pub struct Run {
    manifest: RunManifest,
    manifest_path: PathBuf,
    written: Vec<PathBuf>,
    start: Instant,
    committed: bool,
}

impl Run {
    pub fn new(subcommand: &str, flags: &impl Serialize, manifest_path: PathBuf) -> Result<Self> {
        Ok(Run {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                args: std::env::args().skip(1).collect(),
                flags: serde_json::to_value(flags)?,
                cwd: std::env::current_dir()?,
                inputs: Vec::new(),
                outputs: Vec::new(),
                seed: None,
                threads: rayon::current_num_threads(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                schema_hash: None,
                warnings: BTreeMap::new(),
                metrics: BTreeMap::new(),
                wall_seconds: 0.0,
                iteration_seconds: Vec::new(),
            },
            manifest_path,
            written: Vec::new(),
            start: Instant::now(),
            committed: false,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileRecord {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn schema(&mut self, schema: &Schema) {
        self.manifest.schema_hash = Some(schema.hash());
    }

    pub fn warn(&mut self, key: &str, count: u64) {
        if count > 0 {
            log::warn!("{key}: {count}");
        }
        *self.manifest.warnings.entry(key.to_string()).or_default() += count;
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.manifest.metrics.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn iteration_seconds(&mut self, seconds: &[f64]) {
        self.manifest.iteration_seconds = seconds.to_vec();
    }

    /// Registers `path` for cleanup and opens it for writing.
    pub fn create(&mut self, path: &Path) -> Result<BufWriter<File>> {
        self.written.push(path.to_path_buf());
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    /// Writes one output file through `f`.
    pub fn write_with<F>(&mut self, path: &Path, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut out = self.create(path)?;
        f(&mut out)?;
        out.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Registers a file written by someone else (e.g. a library save routine).
    pub fn register(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    /// Hashes the outputs, writes the manifest and keeps everything.
    pub fn finish(mut self) -> Result<RunManifest> {
        for path in &self.written {
            self.manifest.outputs.push(FileRecord {
                path: path.clone(),
                sha256: sha256_file(path)?,
            });
        }
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        let path = self.manifest_path.clone();
        self.written.push(path.clone());
        let mut out = self.create(&path)?;
        serde_json::to_writer_pretty(&mut out, &self.manifest)?;
        writeln!(out)?;
        out.flush()?;
        self.committed = true;
        Ok(self.manifest.clone())
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in &self.written {
            if path.exists() {
                log::info!("removing partial output {}", path.display());
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}
