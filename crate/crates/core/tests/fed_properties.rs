mod common;

use common::*;
use fedal::data::{ClientPools, Dataset, NoAudit, Split};
use fedal::fed::{fedavg, independent_train, local_update, weighted_average, FedConfig, Federation, Minibatch};
use fedal::nn::{Activation, LrSchedule, MlpArchitecture, Model, ParamVector};
use fedal::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn cfg(minibatch: Minibatch, iters: usize, stop: f64) -> FedConfig {
    FedConfig {
        local_epochs: 1,
        minibatch,
        schedule: LrSchedule::new(0.2, 0.99).unwrap(),
        stop_loss_threshold: stop,
        max_global_iters: iters,
    }
}

/// `copies` identical blocks of the same random rows.
fn mirrored(n: usize, copies: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (xs, ys) = random_batch(&mut r, 2, 3, n);
    let features: Vec<f64> = (0..copies).flat_map(|_| xs.iter().flatten().copied()).collect();
    let labels: Vec<usize> = (0..copies).flat_map(|_| ys.iter().copied()).collect();
    Dataset::new(features, 2, labels, 3, Split::Train).unwrap()
}

fn labeled_pool(id: usize, range: std::ops::Range<usize>, ds: &Dataset) -> ClientPools {
    let mut p = ClientPools::new(id, range.clone());
    p.annotate(&range.collect::<Vec<_>>(), 1, ds).unwrap();
    p
}

fn arch() -> MlpArchitecture {
    MlpArchitecture::new(vec![2, 5, 3], Activation::Tanh, 0.0, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn average_is_convex_and_order_fixed(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..7),
        weights in prop::collection::vec(0usize..50, 7),
        perm_seed in any::<u64>(),
    ) {
        let m = rows.len();
        let mut w: Vec<usize> = weights[..m].to_vec();
        if w.iter().all(|&x| x == 0) {
            w[0] = 1;
        }
        let models: Vec<ParamVector> = rows.iter().cloned().map(ParamVector::new).collect();
        let avg = weighted_average(&models, &w).unwrap();
        for i in 0..4 {
            let active = rows.iter().zip(&w).filter(|(_, &w)| w > 0).map(|(r, _)| r[i]);
            let lo = active.clone().fold(f64::INFINITY, f64::min);
            let hi = active.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= avg.as_slice()[i] && avg.as_slice()[i] <= hi);
        }
        // Shuffling the client list and restoring client order reproduces the bytes.
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng(perm_seed));
        let mut pairs: Vec<(usize, ParamVector, usize)> = order.iter().map(|&i| (i, models[i].clone(), w[i])).collect();
        pairs.sort_by_key(|p| p.0);
        let (again_m, again_w): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(_, p, w)| (p, w)).unzip();
        prop_assert_eq!(weighted_average(&again_m, &again_w).unwrap(), avg);
    }
}

#[test]
fn average_errors() {
    let a = ParamVector::new(vec![1.0, 2.0]);
    assert!(matches!(weighted_average(&[], &[]), Err(Error::EmptyInput(_))));
    assert!(matches!(
        weighted_average(&[a.clone(), ParamVector::new(vec![1.0])], &[1, 1]),
        Err(Error::Shape(_))
    ));
    assert!(weighted_average(std::slice::from_ref(&a), &[0]).is_err());
    assert!(weighted_average(&[a], &[1, 2]).is_err());
}

#[test]
fn identical_clients_match_single_client() {
    let n = 30;
    let ds = mirrored(n, 3, 4);
    let init = Model::init(arch(), 2);
    let c = cfg(Minibatch::Full, 40, 1e-9);
    let three: Vec<ClientPools> = (0..3).map(|m| labeled_pool(m, m * n..(m + 1) * n, &ds)).collect();
    let one = [labeled_pool(0, 0..n, &ds)];
    let a = fedavg(&Federation::new(&ds, &three), &init, &c, 7).unwrap();
    let b = fedavg(&Federation::new(&ds, &one), &init, &c, 7).unwrap();
    assert_eq!(a.global_iters_used, b.global_iters_used);
    for (x, y) in a.loss_trace.iter().zip(&b.loss_trace) {
        assert!((x - y).abs() <= 1e-12);
    }
    for (x, y) in a.final_model.params().as_slice().iter().zip(b.final_model.params().as_slice()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn infinite_threshold_stops_after_one_iteration() {
    let ds = mirrored(20, 1, 5);
    let pools = [labeled_pool(0, 0..20, &ds)];
    let report = fedavg(
        &Federation::new(&ds, &pools),
        &Model::init(arch(), 1),
        &cfg(Minibatch::Size(4), 100, f64::INFINITY),
        0,
    )
    .unwrap();
    assert_eq!(report.global_iters_used, 1);
    assert_eq!(report.loss_trace.len(), 1);
}

#[test]
fn clients_without_labels_are_skipped() {
    let ds = mirrored(20, 2, 6);
    let init = Model::init(arch(), 1);
    let c = cfg(Minibatch::Size(5), 10, 1e-9);
    let with_empty = [labeled_pool(0, 0..20, &ds), ClientPools::new(1, 20..40)];
    let alone = [labeled_pool(0, 0..20, &ds)];
    let a = fedavg(&Federation::new(&ds, &with_empty), &init, &c, 3).unwrap();
    let b = fedavg(&Federation::new(&ds, &alone), &init, &c, 3).unwrap();
    assert_eq!(a.final_model, b.final_model);
    let nobody = [ClientPools::new(0, 0..20)];
    assert!(matches!(
        fedavg(&Federation::new(&ds, &nobody), &init, &c, 3),
        Err(Error::InvalidState(_))
    ));
}

#[test]
fn local_update_examples() {
    let ds = mirrored(12, 1, 7);
    let pool = labeled_pool(0, 0..12, &ds);
    let batch = pool.labeled_samples(&ds, &NoAudit);
    let model = Model::init(arch(), 3);
    let full = cfg(Minibatch::Full, 1, 1.0);
    let one_step = local_update(&model, &batch, 0.1, &full, &mut rng(0)).unwrap();
    let g = model.grad(&batch, None).unwrap();
    let expected: Vec<f64> = model.params().as_slice().iter().zip(g.as_slice()).map(|(p, g)| p - 0.1 * g).collect();
    assert_eq!(one_step.as_slice(), expected.as_slice());
    let frozen = local_update(&model, &batch, 0.0, &cfg(Minibatch::Size(5), 1, 1.0), &mut rng(0)).unwrap();
    assert_eq!(&frozen, model.params());
    let mb = cfg(Minibatch::Size(5), 1, 1.0);
    assert_eq!(
        local_update(&model, &batch, 0.1, &mb, &mut rng(9)).unwrap(),
        local_update(&model, &batch, 0.1, &mb, &mut rng(9)).unwrap()
    );
    assert!(local_update(&model, &[], 0.1, &mb, &mut rng(9)).is_err());
}

#[test]
fn independent_training_is_single_client_fedavg() {
    let ds = mirrored(40, 2, 8);
    let pools = [labeled_pool(0, 0..40, &ds), labeled_pool(1, 40..80, &ds)];
    let init = Model::init(arch(), 4);
    let c = cfg(Minibatch::Size(8), 25, 1e-6);
    let alone = independent_train(&ds, &pools[1], &init, &c, 11, &NoAudit).unwrap();
    let fed = fedavg(&Federation::new(&ds, &pools[1..]), &init, &c, 11).unwrap();
    assert_eq!(alone.final_model, fed.final_model);
    assert_eq!(alone.loss_trace, fed.loss_trace);
    let again = independent_train(&ds, &pools[1], &init, &c, 11, &NoAudit).unwrap();
    assert_eq!(alone.final_model, again.final_model);
    let empty = ClientPools::new(2, 0..10);
    assert!(matches!(
        independent_train(&ds, &empty, &init, &c, 11, &NoAudit),
        Err(Error::InvalidState(_))
    ));
}
