use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsiam::harness::{load_datasets, partition_for, run_federation, FederationConfig};
use fedsiam::training::Strategy;
use fedsiam::Result;

#[derive(Parser)]
#[command(name = "fedsiam", about = "Federated learning simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured strategy (fedavg, fedprox, moon, fedsiam_da).
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics and the final model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-client label histogram of the configured partition.
    PartitionStats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            strategy,
            seed,
            out,
        } => {
            let mut cfg = FederationConfig::from_file(&config)?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            let output = run_federation(&cfg)?;
            if let Some(last) = output.metrics.last() {
                println!(
                    "round {}: test acc {:.4}, test loss {:.4}, mean client acc {:.4}",
                    last.round, last.global_test_acc, last.global_test_loss, last.mean_client_acc
                );
            }
        }
        Command::PartitionStats { config, seed } => {
            let mut cfg = FederationConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let (train, _) = load_datasets(&cfg)?;
            let partition = partition_for(&cfg, &train)?;
            let hist = partition.histograms(train.labels(), train.num_classes());
            for (k, h) in hist.iter().enumerate() {
                let counts: Vec<String> = h.iter().map(usize::to_string).collect();
                println!(
                    "client {k} n={} [{}]",
                    h.iter().sum::<usize>(),
                    counts.join(" ")
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
