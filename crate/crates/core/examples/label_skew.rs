//! Non-IID partitioning: each client holds only two of ten classes.
//!
//! ```text
//! cargo run --release --example label_skew
//! ```

use fedal::data::{partition, BlobGenerator, PartitionMode, PartitionSpec, Split};

fn main() -> fedal::Result<()> {
    let train = BlobGenerator::new(10, 4, 2.0, 0.5, 0)?.sample(2000, 1, Split::Train)?;
    for mode in [PartitionMode::IidDisjoint, PartitionMode::LabelSkew { classes_per_client: 2 }] {
        let spec = PartitionSpec { client_count: 5, mode };
        println!("{mode:?}");
        for pool in partition(&train, &spec, 3)? {
            let census = train.label_census(pool.shard().iter().copied());
            println!("  client {}: {:>4} rows, per class {:?}", pool.client_id(), pool.shard().len(), census);
        }
    }
    Ok(())
}
