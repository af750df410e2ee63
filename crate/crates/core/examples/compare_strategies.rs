//! Random sampling vs separate AL vs federated AL on the desk benchmark.
//!
//! ```text
//! cargo run --release --example compare_strategies -- [repeats] [scorer]
//! ```

use fedal::harness::{parse_config_with, run_experiment, Overrides};

fn main() -> fedal::Result<()> {
    let mut args = std::env::args().skip(1);
    let repeats = args.next().map_or(5, |s| s.parse().expect("repeats must be an integer"));
    let scorer = args.next().unwrap_or_else(|| "entropy".into());
    let overrides = Overrides {
        repeats: Some(repeats),
        scorer: Some(scorer.clone()),
        ..Overrides::default()
    };
    let toml = "preset = \"desk\"\n[al]\ntrack_independent = true\n";
    let mut cfg = parse_config_with(toml.as_bytes(), &overrides)?;
    if scorer == "mc_dropout" {
        cfg.arch = cfg.arch.clone().with_dropout(0.2)?;
    }

    let started = std::time::Instant::now();
    let table = run_experiment(&cfg)?;
    println!("{repeats} paired repeats, scorer {scorer}, {:.1?}\n", started.elapsed());

    println!("{:<8} {}", "", (1..=cfg.rounds).map(|k| format!("  round {k}")).collect::<String>());
    let summary = table.summary();
    for strategy in ["random", "s_al", "f_al"] {
        let cells: String = summary
            .iter()
            .filter(|s| s.strategy == strategy)
            .map(|s| format!("  {:.4} ", s.mean_accuracy))
            .collect();
        println!("{strategy:<8} {cells}");
    }

    println!("\nmean accuracy of clients training alone after each round:");
    for strategy in ["random", "s_al", "f_al"] {
        let cells: String = (1..=cfg.rounds)
            .map(|k| {
                let accs: Vec<f64> = table
                    .independent()
                    .iter()
                    .filter(|r| r.strategy == strategy && r.round == k)
                    .map(|r| r.test_accuracy)
                    .collect();
                format!("  {:.4} ", accs.iter().sum::<f64>() / accs.len() as f64)
            })
            .collect();
        println!("{strategy:<8} {cells}");
    }
    Ok(())
}
