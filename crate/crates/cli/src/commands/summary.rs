use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use mixtopic::corpus::{parse_corpus, parse_corpus_lenient, parse_meta};

#[derive(Args, Debug)]
pub struct SummaryArgs {
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Skip rows outside the schema instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

pub fn run(args: SummaryArgs) -> Result<()> {
    let schema = parse_meta(&args.meta)?;
    let (corpus, skipped) = if args.lenient {
        parse_corpus_lenient(&args.data, &schema)?
    } else {
        (parse_corpus(&args.data, &schema)?, 0)
    };
    let out = serde_json::json!({
        "schema_hash": schema.hash(),
        "summary": corpus.summary(),
        "skipped_rows": skipped,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
