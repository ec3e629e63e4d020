use std::path::PathBuf;
use std::process::Command;

use anyhow::{bail, Context, Result};
use clap::Args;

use crate::manifest::{read_manifest, sha256_file};

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Re-run without comparing output hashes.
    #[arg(long)]
    pub no_check: bool,
}

/// Runs the recorded command line again, in the recorded directory and with
/// the recorded thread count, then compares every output hash.
pub fn run(args: ReplayArgs) -> Result<()> {
    let recorded = read_manifest(&args.manifest)?;
    let exe = std::env::current_exe().context("locating the mixtopic executable")?;
    let status = Command::new(exe)
        .args(&recorded.args)
        .current_dir(&recorded.cwd)
        .env("MIXTOPIC_THREADS", recorded.threads.to_string())
        .status()
        .context("starting the replayed command")?;
    if !status.success() {
        bail!("replayed command failed with {status}");
    }
    if args.no_check {
        return Ok(());
    }
    let mut mismatched = Vec::new();
    for out in &recorded.outputs {
        let path = recorded.cwd.join(&out.path);
        let now = sha256_file(&path)?;
        if now != out.sha256 {
            mismatched.push(out.path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        bail!("outputs differ from the recorded run: {}", mismatched.join(", "));
    }
    println!("{} outputs reproduced", recorded.outputs.len());
    Ok(())
}
