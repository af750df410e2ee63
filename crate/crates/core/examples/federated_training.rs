//! FedAvg over three clients versus each client training alone on its own
//! labeled shard.
//!
//! ```text
//! cargo run --release --example federated_training
//! ```

use fedal::data::{partition, seed_initial_labels, BlobGenerator, NoAudit, PartitionMode, PartitionSpec, Split};
use fedal::fed::{evaluate, fedavg, independent_train, FedConfig, Federation, Minibatch};
use fedal::nn::{LrSchedule, MlpArchitecture, Model};

fn main() -> fedal::Result<()> {
    let blobs = BlobGenerator::new(8, 2, 2.0, 0.3, 11)?;
    let train = blobs.sample(3000, 1, Split::Train)?;
    let test = blobs.sample(1000, 2, Split::Test)?;
    let spec = PartitionSpec {
        client_count: 3,
        mode: PartitionMode::IidDisjoint,
    };
    let mut pools = partition(&train, &spec, 5)?;
    seed_initial_labels(&mut pools, 0.05, 5)?;

    let cfg = FedConfig {
        local_epochs: 1,
        minibatch: Minibatch::Size(16),
        schedule: LrSchedule::new(0.1, 0.997)?,
        stop_loss_threshold: 0.01,
        max_global_iters: 200,
    };
    let init = Model::init(MlpArchitecture::classifier(vec![2, 32, 8])?, 3);

    let report = fedavg(&Federation::new(&train, &pools), &init, &cfg, 9)?;
    println!(
        "FedAvg on {} labels: {} global iterations, final loss {:.4}, test accuracy {:.4}",
        pools.iter().map(|p| p.labeled().len()).sum::<usize>(),
        report.global_iters_used,
        report.loss_trace.last().copied().unwrap_or(f64::NAN),
        evaluate(&report.final_model, &test)?
    );

    let alone = FedConfig {
        schedule: LrSchedule::new(0.02, 0.997)?,
        ..cfg
    };
    for pool in &pools {
        let r = independent_train(&train, pool, &init, &alone, 9, &NoAudit)?;
        println!(
            "client {} alone on {} labels: test accuracy {:.4}",
            pool.client_id(),
            pool.labeled().len(),
            evaluate(&r.final_model, &test)?
        );
    }
    Ok(())
}
