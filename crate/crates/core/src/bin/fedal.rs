use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedal::harness::{emit_csv, load_config, run_experiment, Overrides};

#[derive(Parser)]
#[command(name = "fedal", version, about = "Compare annotation strategies in federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy/scorer combination of a config file and write CSV results.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = ["random", "s_al", "f_al", "full_budget"])]
        strategy: Option<String>,
        #[arg(long, value_parser = ["entropy", "mc_dropout", "discrepancy", "coreset", "random"])]
        scorer: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Command::Run {
        config,
        out,
        repeats,
        seed,
        strategy,
        scorer,
    } = cli.command;
    let overrides = Overrides {
        output: out,
        repeats,
        seed,
        strategy,
        scorer,
    };
    // Anything that goes wrong before training starts (including an
    // unreadable config file) is a configuration error.
    let cfg = match load_config(&config, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(note) = cfg.provenance_note() {
        eprintln!("{note}");
    }
    let result = run_experiment(&cfg).and_then(|table| {
        emit_csv(&table, &cfg.output)?;
        for s in table.summary() {
            println!(
                "{:<12} {:<12} round {:>2}  labeled {:.3}  accuracy {:.4} +/- {:.4}",
                s.strategy, s.scorer, s.round, s.labeled_fraction, s.mean_accuracy, s.std_accuracy
            );
        }
        eprintln!("wrote {}", cfg.output.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
