mod common;

use common::*;
use fedal::data::{Dataset, Split};
use fedal::fed::evaluate;
use fedal::nn::{init_params, sgd_step, Activation, MlpArchitecture, Model, ParamVector};
use proptest::prelude::*;
use rand::Rng as _;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn heads_are_normalized(seed in any::<u64>(), scale in 0.1f64..20.0, dropout in any::<bool>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r, 200);
        let model = random_model(arch.clone(), &mut r, scale);
        let x: Vec<f64> = (0..arch.input_dim()).map(|_| r.gen_range(-5.0..5.0)).collect();
        let mut mask = rng(seed ^ 1);
        let heads = model.forward(&x, dropout.then_some(&mut mask)).unwrap();
        prop_assert_eq!(heads.len(), arch.head_count());
        for p in heads {
            prop_assert_eq!(p.len(), arch.class_count());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn forward_without_rng_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r, 200);
        let model = random_model(arch.clone(), &mut r, 2.0);
        let x: Vec<f64> = (0..arch.input_dim()).map(|_| r.gen_range(-5.0..5.0)).collect();
        prop_assert_eq!(model.forward(&x, None).unwrap(), model.forward(&x, None).unwrap());
    }

    #[test]
    fn param_count_is_pure(sizes in prop::collection::vec(1usize..10, 2..5), heads in 1usize..3) {
        let a = MlpArchitecture::new(sizes.clone(), Activation::Relu, 0.0, heads).unwrap();
        let b = MlpArchitecture::new(sizes, Activation::Tanh, 0.5, heads).unwrap();
        prop_assert_eq!(a.param_count(), b.param_count());
        prop_assert_eq!(init_params(&a, 1).len(), a.param_count());
    }
}

#[test]
fn small_step_does_not_increase_full_batch_loss() {
    let mut r = rng(21);
    for _ in 0..50 {
        let arch = random_arch(&mut r, 200);
        let plain = MlpArchitecture::new(arch.layer_sizes().to_vec(), arch.activation(), 0.0, arch.head_count()).unwrap();
        let model = random_model(plain.clone(), &mut r, 1.0);
        let n = r.gen_range(1..=10);
        let (xs, ys) = random_batch(&mut r, plain.input_dim(), plain.class_count(), n);
        let batch = samples(&xs, &ys);
        let (before, g) = model.loss_and_grad(&batch, None).unwrap();
        let stepped = model.with_params(sgd_step(model.params(), &g, 1e-3).unwrap()).unwrap();
        let after = stepped.loss(&batch, None).unwrap();
        assert!(after <= before, "loss rose from {before} to {after}");
    }
}

#[test]
fn init_depends_on_seed() {
    let arch = MlpArchitecture::classifier(vec![3, 7, 4]).unwrap();
    assert_eq!(init_params(&arch, 4), init_params(&arch, 4));
    assert_ne!(init_params(&arch, 4), init_params(&arch, 5));
    let fan_in_bound = 1.0 / 3f64.sqrt();
    assert!(init_params(&arch, 4).as_slice()[..21].iter().all(|w| w.abs() <= fan_in_bound));
}

#[test]
fn successive_steps_are_linear_in_lr() {
    let p = ParamVector::new(vec![1.0, -2.0, 0.5]);
    let g = ParamVector::new(vec![0.25, 0.5, -1.0]);
    let two = sgd_step(&sgd_step(&p, &g, 0.5).unwrap(), &g, 0.25).unwrap();
    let one = sgd_step(&p, &g, 0.75).unwrap();
    assert_eq!(two, one);
}

#[test]
fn zero_model_accuracy_is_share_of_class_zero() {
    let mut r = rng(8);
    let classes = 5;
    let labels: Vec<usize> = (0..500).map(|_| r.gen_range(0..classes)).collect();
    let features: Vec<f64> = (0..500 * 2).map(|_| r.gen_range(-1.0..1.0)).collect();
    let test = Dataset::new(features, 2, labels.clone(), classes, Split::Test).unwrap();
    let zero = Model::zeros(MlpArchitecture::classifier(vec![2, 4, classes]).unwrap());
    let census = test.label_census(0..500);
    let expected = census[0] as f64 / 500.0;
    assert_eq!(evaluate(&zero, &test).unwrap(), expected);
}

#[test]
fn constant_wrong_prediction_scores_zero() {
    // Output bias favors class 1 while every label is 0.
    let arch = MlpArchitecture::classifier(vec![2, 2]).unwrap();
    let model = Model::new(arch, ParamVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
    let test = Dataset::new(vec![0.3, 0.1, -2.0, 4.0], 2, vec![0, 0], 2, Split::Test).unwrap();
    assert_eq!(evaluate(&model, &test).unwrap(), 0.0);
}
