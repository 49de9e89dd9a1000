use std::path::PathBuf;

use clap::{Parser, Subcommand};

use dingdate_core::evalbench::render_table;
use dingdate_service::tools::{self, EvalRun};

#[derive(Parser)]
#[command(name = "evalbench", version, about = "Stratified test sets and per-period accuracy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a near-uniform test set from a dataset manifest.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 300)]
        total: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a test set; writes the table and a `.kv` companion.
    Run {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Directory image refs resolve against (default: the testset's).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Full dataset manifest for the Number row (default: the testset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        width: usize,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Build {
            manifest,
            total,
            seed,
            out,
        } => {
            let t = tools::eval_build(&manifest, total, seed, &out)?;
            println!("{} images written to {}", t.len(), out.display());
        }
        Command::Run {
            weights,
            testset,
            report,
            images,
            dataset,
            width,
        } => {
            let r = tools::eval_run(&EvalRun {
                weights: &weights,
                testset: &testset,
                report: &report,
                images: images.as_deref(),
                dataset: dataset.as_deref(),
                width,
            })?;
            print!("{}", render_table(&r));
        }
    }
    Ok(())
}
