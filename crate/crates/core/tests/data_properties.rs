mod common;

use common::rng;
use fedal::data::{
    initial_label_count, load_external, partition, seed_initial_labels, synth_blobs, BlobGenerator, ClientPools,
    Dataset, ExternalFormat, MinMax, PartitionMode, PartitionSpec, Split,
};
use fedal::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use std::collections::BTreeSet;
use std::io::Write;

fn blobs(n: usize, classes: usize, seed: u64) -> Dataset {
    BlobGenerator::new(classes, 2, 2.0, 0.5, seed).unwrap().sample(n, seed + 1, Split::Train).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn annotate_sequences_keep_invariants(seed in any::<u64>(), n in 5usize..60, steps in 1usize..12) {
        let ds = blobs(n, 3, 1);
        let mut r = rng(seed);
        let mut pool = ClientPools::new(0, 0..n);
        for round in 1..=steps {
            let before = pool.clone();
            let mut pick: Vec<usize> = (0..n + 5).collect();
            pick.shuffle(&mut r);
            pick.truncate(r.gen_range(0..4));
            if r.gen_bool(0.2) && !pick.is_empty() {
                pick.push(pick[0]);
            }
            match pool.annotate(&pick, round, &ds) {
                Ok(revealed) => {
                    prop_assert_eq!(revealed.len(), pick.len());
                    for (i, y) in revealed {
                        prop_assert_eq!(y, ds.label(i));
                        prop_assert!(pool.labeled().contains(&i));
                    }
                }
                Err(e) => {
                    prop_assert!(matches!(e, Error::PoolIntegrity { .. }), "{e}");
                    prop_assert_eq!(&pool, &before);
                }
            }
            prop_assert!(pool.check_invariants().is_ok());
            prop_assert_eq!(pool.labeled().len() + pool.unlabeled().len(), n);
        }
    }

    #[test]
    fn iid_partition_covers_every_index_once(seed in any::<u64>(), n in 1usize..200, m in 1usize..8) {
        prop_assume!(m <= n);
        let ds = blobs(n.max(3), 3, 2);
        let pools = partition(&ds, &PartitionSpec { client_count: m, mode: PartitionMode::IidDisjoint }, seed).unwrap();
        let mut all = BTreeSet::new();
        for p in &pools {
            prop_assert!(p.shard().len().abs_diff(ds.len() / m) <= 1);
            for &i in p.shard() {
                prop_assert!(all.insert(i));
            }
        }
        prop_assert_eq!(all.len(), ds.len());
    }
}

#[test]
fn label_skew_census_matches_ownership() {
    let ds = blobs(2000, 10, 3);
    let spec = PartitionSpec { client_count: 5, mode: PartitionMode::LabelSkew { classes_per_client: 2 } };
    let pools = partition(&ds, &spec, 11).unwrap();
    let totals = ds.label_census(0..ds.len());
    for (c, pool) in pools.iter().enumerate() {
        let census = ds.label_census(pool.shard().iter().copied());
        for (class, &count) in census.iter().enumerate() {
            // M*k == C here, so every class has exactly one owner.
            let owned = class / 2 == c;
            assert_eq!(count, if owned { totals[class] } else { 0 }, "client {c} class {class}");
        }
    }
    assert_eq!(pools, partition(&ds, &spec, 11).unwrap());
}

#[test]
fn initial_labels_have_expected_counts_and_are_seeded() {
    let ds = blobs(1003, 4, 4);
    let spec = PartitionSpec { client_count: 3, mode: PartitionMode::IidDisjoint };
    let fresh = partition(&ds, &spec, 5).unwrap();
    let mut a = fresh.clone();
    let mut b = fresh.clone();
    seed_initial_labels(&mut a, 0.1, 6).unwrap();
    seed_initial_labels(&mut b, 0.1, 6).unwrap();
    assert_eq!(a, b);
    for p in &a {
        let expected = (0.1 * p.shard().len() as f64).round_ties_even() as usize;
        assert_eq!(p.labeled().len(), expected);
        assert_eq!(p.initial(), p.labeled());
        assert!(p.history().is_empty());
        p.check_invariants().unwrap();
    }
    let mut c = fresh;
    seed_initial_labels(&mut c, 0.1, 7).unwrap();
    assert_ne!(a, c);
    assert_eq!(initial_label_count(25, 0.1), 2);
    assert_eq!(initial_label_count(35, 0.1), 4);
    assert!(seed_initial_labels(&mut a, 0.1, 6).is_err());
}

#[test]
fn synth_blobs_minimum_and_determinism() {
    let ds = synth_blobs(8, 8, 3, 0.2, 9).unwrap();
    assert_eq!(ds.len(), 8);
    assert!(ds.label_census(0..8).iter().all(|&c| c == 1));
    let again = synth_blobs(8, 8, 3, 0.2, 9).unwrap();
    let bytes = |d: &Dataset| d.features().iter().flat_map(|f| f.to_bits().to_le_bytes()).collect::<Vec<u8>>();
    assert_eq!(bytes(&ds), bytes(&again));
    assert_eq!(ds.labels(), again.labels());
    assert!(synth_blobs(7, 8, 3, 0.2, 9).is_err());
}

#[test]
fn csv_three_rows() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "0,10,1\n5,20,0\n10,30,2").unwrap();
    let ds = load_external(f.path(), &ExternalFormat::CsvLabeled, None, Split::Train).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.class_count()), (3, 2, 3));
    assert_eq!(ds.labels(), &[1, 0, 2]);
    assert_eq!(ds.row(1), &[5.0, 20.0]);
    let scaler = MinMax::fit(&ds);
    let scaled = scaler.apply(&ds).unwrap();
    assert_eq!(scaled.row(0), &[0.0, 0.0]);
    assert_eq!(scaled.row(1), &[0.5, 0.5]);
    assert_eq!(scaled.row(2), &[1.0, 1.0]);
    assert_eq!(scaled.labels(), ds.labels());

    // Held-out rows use the fitted ranges, not their own.
    let held_out = Dataset::new(vec![2.5, 40.0, 20.0, 10.0], 2, vec![0, 1], 3, Split::Test).unwrap();
    let t = scaler.apply(&held_out).unwrap();
    assert_eq!(t.row(0), &[0.25, 1.5]);
    assert_eq!(t.row(1), &[2.0, 0.0]);
    let narrow = Dataset::new(vec![1.0], 1, vec![0], 3, Split::Test).unwrap();
    assert!(scaler.apply(&narrow).is_err());
    assert!(matches!(
        load_external(f.path(), &ExternalFormat::CsvLabeled, Some(2), Split::Train),
        Err(Error::Parse { record: 3, .. })
    ));
}
