//! Runs an experiment described by a TOML file and writes the result CSVs,
//! like `fedal run` does.
//!
//! ```text
//! cargo run --release --example run_config -- examples/configs/quick.toml
//! ```

use std::path::PathBuf;

use fedal::harness::{emit_csv, load_config, run_experiment, Overrides};

fn main() -> fedal::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/quick.toml")));
    let cfg = load_config(&path, &Overrides::default())?;
    let table = run_experiment(&cfg)?;
    emit_csv(&table, &cfg.output)?;
    for s in table.summary() {
        println!(
            "{:<12} {:<12} round {}  labeled {:.3}  accuracy {:.4} +/- {:.4}",
            s.strategy, s.scorer, s.round, s.labeled_fraction, s.mean_accuracy, s.std_accuracy
        );
    }
    println!("wrote {}", cfg.output.display());
    Ok(())
}
