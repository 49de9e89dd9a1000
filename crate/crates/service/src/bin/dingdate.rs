use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use dingdate_core::detect::{DetectorBackend, RemoteBackend, StubBackend};
use dingdate_core::nnx::weights;
use dingdate_core::Period;
use dingdate_service::tools::{self, NewArtifact};
use dingdate_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "dingdate", version, about = "Bronze Ding dating service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute missing reference embeddings and write the index sidecar.
    Ingest {
        /// Catalog directory or its catalog.tsv.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Register one reference artifact and store its photo.
    Add {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        id: String,
        /// e.g. Shang.Late, WesternZhou.Early
        #[arg(long)]
        period: Period,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "")]
        shape: String,
        #[arg(long, default_value = "")]
        literature: String,
        #[arg(long, default_value = "")]
        excavation: String,
        #[arg(long, default_value = "")]
        museum: String,
    },
    /// Write a tiny randomly initialized weights file.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write preprocessing variants and the box overlay of one photo as PNGs.
    Dump {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        detector_url: Option<String>,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match Cli::parse().command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config).with_context(|| format!("config {}", config.display()))?;
            tokio::runtime::Runtime::new()?.block_on(dingdate_service::serve(config))
        }
        Command::Ingest { manifest, weights } => {
            let n = tools::ingest(&manifest, &weights)?;
            println!("embedded {n} artifacts");
            Ok(())
        }
        Command::Add {
            catalog,
            id,
            period,
            image,
            shape,
            literature,
            excavation,
            museum,
        } => {
            let r = tools::add_artifact(
                &catalog,
                NewArtifact {
                    id: &id,
                    period,
                    image: &image,
                    shape: &shape,
                    literature: &literature,
                    excavation: &excavation,
                    museum: &museum,
                },
            )?;
            println!("{}\t{}\t{}", r.id, r.period, r.image_ref);
            Ok(())
        }
        Command::InitWeights { out, seed } => {
            let model = tools::init_weights(&out, seed)?;
            println!("{}", model.descriptor());
            Ok(())
        }
        Command::Dump {
            image,
            out,
            seed,
            weights: weights_path,
            detector_url,
        } => {
            let detector: Box<dyn DetectorBackend> = match detector_url {
                Some(url) => Box::new(RemoteBackend::new(url, Duration::from_secs(5), 1)),
                None => Box::new(StubBackend),
            };
            let model = weights_path.map(|p| weights::load(&p)).transpose()?;
            for p in tools::dump(&image, &out, seed, detector.as_ref(), model.as_ref())? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}
