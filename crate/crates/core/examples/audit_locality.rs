//! Runs separate and federated AL with an observer that records every read of
//! labeled data and which clients trained each scoring model.
//!
//! ```text
//! cargo run --release --example audit_locality
//! ```

use std::sync::Mutex;

use fedal::data::AccessObserver;
use fedal::harness::{parse_config, RunSpec, StrategyChoice};
use fedal::orchestrator::{Observer, ScoringEvent};
use fedal::strategies::ScorerKind;

#[derive(Default)]
struct Log {
    reads: Mutex<Vec<(usize, usize)>>,
    scored: Mutex<Vec<ScoringEvent>>,
}

impl AccessObserver for Log {
    fn labeled_read(&self, client: usize, indices: &[usize]) {
        self.reads.lock().unwrap().push((client, indices.len()));
    }
}

impl Observer for Log {
    fn scored(&self, event: &ScoringEvent) {
        self.scored.lock().unwrap().push(event.clone());
    }
}

fn main() -> fedal::Result<()> {
    let cfg = parse_config(b"preset = \"desk\"\n[dataset]\ntrain = 900\n[al]\nrounds = 3\nbudget = 90\n")?;
    let prepared = cfg.prepare(1)?;
    for strategy in [StrategyChoice::SAl, StrategyChoice::FAl] {
        let run = RunSpec {
            strategy,
            scorer: Some(ScorerKind::Entropy),
        };
        let log = Log::default();
        let mut sim = cfg.simulation(&prepared, &run);
        sim.observer = &log;
        let out = sim.run(prepared.pools.clone(), prepared.seed)?;
        let reads = log.reads.lock().unwrap();
        println!("{}: {} labeled-set reads", strategy.name(), reads.len());
        for event in log.scored.lock().unwrap().iter().filter(|e| e.round == 1) {
            println!(
                "  round 1, client {} scored with model {:016x} trained on clients {:?}",
                event.client, event.model_fingerprint, event.trained_on
            );
        }
        println!("  final accuracy {:.4}", out.logs.last().map_or(f64::NAN, |l| l.test_accuracy));
    }
    Ok(())
}
