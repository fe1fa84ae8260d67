use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedbackdoor::harness::{parse_config, run_experiment, write_metrics, AggregatorKind, Overrides};

#[derive(Parser)]
#[command(name = "fedbackdoor", version, about = "Federated backdoor attack simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// fedavg or meta
        #[arg(long)]
        aggregator: Option<AggregatorKind>,
        #[arg(long)]
        fixed_p: Option<f64>,
    },
}

fn run(cli: Cli) -> fedbackdoor::Result<()> {
    let Command::Run {
        config,
        seed,
        out,
        aggregator,
        fixed_p,
    } = cli.command;
    let bytes = std::fs::read(&config).map_err(|e| fedbackdoor::Error::Io {
        path: config.clone(),
        source: e,
    })?;
    let cfg = parse_config(&bytes)?.with_overrides(Overrides {
        seed,
        aggregator,
        fixed_p,
    })?;
    let outcome = run_experiment(&cfg)?;
    let files = write_metrics(&outcome.rows, &out, &outcome.summary_options(cfg.backdoor_threshold))?;
    let last = outcome.rows.last().expect("at least one round");
    print!("round {}: main_acc={:.4}", last.round, last.main_accuracy);
    for (name, v) in &last.backdoor_accuracy {
        print!(" backdoor_{name}={v:.4}");
    }
    println!();
    println!("wrote {} and {}", files.csv.display(), files.summary.display());
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
