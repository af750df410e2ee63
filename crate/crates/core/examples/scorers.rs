//! Scores one client's unlabeled pool with every informativeness measure and
//! shows which points each would annotate.
//!
//! ```text
//! cargo run --release --example scorers
//! ```

use fedal::data::{partition, seed_initial_labels, BlobGenerator, PartitionMode, PartitionSpec, Split};
use fedal::fed::{fedavg, fedavg_with, FedConfig, Federation, Minibatch};
use fedal::nn::{LrSchedule, MlpArchitecture, Model};
use fedal::strategies::{score_pool, select_from_pool, DiscrepancyTrainer, ScorerKind};

fn main() -> fedal::Result<()> {
    let blobs = BlobGenerator::new(3, 2, 2.0, 0.5, 4)?;
    let train = blobs.sample(600, 1, Split::Train)?;
    let spec = PartitionSpec {
        client_count: 2,
        mode: PartitionMode::IidDisjoint,
    };
    let mut pools = partition(&train, &spec, 1)?;
    seed_initial_labels(&mut pools, 0.05, 1)?;
    let cfg = FedConfig {
        local_epochs: 1,
        minibatch: Minibatch::Size(8),
        schedule: LrSchedule::new(0.1, 0.997)?,
        stop_loss_threshold: 0.05,
        max_global_iters: 100,
    };
    let fed = Federation::new(&train, &pools);
    let arch = MlpArchitecture::classifier(vec![2, 16, 3])?.with_dropout(0.3)?;
    let model = fedavg(&fed, &Model::init(arch.clone(), 2), &cfg, 3)?.final_model;
    let trainer = DiscrepancyTrainer {
        local_epochs: 1,
        minibatch: Minibatch::Size(8),
        weight: 1.0,
    };
    let two_heads = fedavg_with(&fed, &Model::init(arch.with_heads(2)?, 2), &cfg, &trainer, 3)?.final_model;

    let pool = &pools[0];
    println!("client 0: {} labeled, {} unlabeled", pool.labeled().len(), pool.unlabeled().len());
    for kind in [
        ScorerKind::Entropy,
        ScorerKind::McDropout { passes: 10 },
        ScorerKind::Discrepancy,
        ScorerKind::Coreset,
        ScorerKind::Random,
    ] {
        let scorer_model = if kind == ScorerKind::Discrepancy { &two_heads } else { &model };
        let picks = select_from_pool(kind, scorer_model, &train, pool, 5, 42)?;
        let detail = if kind == ScorerKind::Coreset {
            String::new()
        } else {
            let scores = score_pool(kind, scorer_model, &train, pool, 42)?;
            let top: Vec<String> = picks
                .iter()
                .map(|i| format!("{:.3}", scores.iter().find(|c| c.index == *i).map_or(f64::NAN, |c| c.score)))
                .collect();
            format!("  scores {}", top.join(" "))
        };
        println!("{:<12} picks {:?}{detail}", kind.name(), picks);
    }
    Ok(())
}
