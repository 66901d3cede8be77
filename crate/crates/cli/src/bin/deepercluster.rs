use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use deepercluster::commands::{self, ClusterArgs, EvalArgs, GenDataArgs};
use deepercluster::Result;
use deepercluster_core::synth::SynthKind;

#[derive(Parser)]
#[command(name = "deepercluster", about = "Clustering-based feature learning on synthetic image sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Blobs,
    Edges,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic IMG1 dataset and its IVEC1 labels.
    GenData {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        classes: usize,
        /// Pixels per image; must be a square.
        #[arg(long)]
        dims: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to OUT with the extension `ivec1`.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train from a config file (or a run manifest) into a run directory.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hierarchical k-means on an FMAT1 feature file.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print evaluation metrics of a run directory as CSV.
    Eval {
        run_dir: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// IVEC1 partition to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            kind,
            n,
            classes,
            dims,
            seed,
            noise,
            out,
            labels,
        } => {
            let kind = match kind {
                Kind::Blobs => SynthKind::Blobs,
                Kind::Edges => SynthKind::Edges,
            };
            let (images, labels) = commands::gen_data(&GenDataArgs {
                kind,
                n,
                classes,
                dims,
                noise,
                seed,
                out,
                labels,
            })?;
            eprintln!("wrote {} and {}", images.display(), labels.display());
        }
        Command::Train { config, out } => {
            let outcome = commands::train(&config, &out)?;
            if let Some(last) = outcome.metrics.last() {
                eprintln!("epoch {}: mean loss {}", last.epoch, last.mean_loss);
            }
            eprintln!("run directory {}", out.display());
        }
        Command::Cluster {
            features,
            m,
            k,
            shards,
            seed,
            iters,
            out,
            truth,
        } => {
            let outcome = commands::cluster(&ClusterArgs {
                features,
                m,
                k,
                shards,
                seed,
                iters,
                out,
                truth,
            })?;
            if let Some(v) = outcome.nmi_truth {
                println!("nmi_truth,{v}");
            }
        }
        Command::Eval {
            run_dir,
            truth,
            reference,
        } => {
            let report = commands::eval(&EvalArgs {
                truth,
                reference,
                ..EvalArgs::new(run_dir)
            })?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
