//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use fedal::nn::{Activation, MlpArchitecture, Model, ParamVector, Sample};
use fedal::rng::Rng;
use fedal::strategies::ScoredCandidate;
use rand::{Rng as _, SeedableRng};

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Random small architecture with at most `max_params` parameters.
pub fn random_arch(r: &mut Rng, max_params: usize) -> MlpArchitecture {
    loop {
        let input = r.gen_range(1..=4);
        let hidden: Vec<usize> = (0..r.gen_range(0..=2)).map(|_| r.gen_range(1..=8)).collect();
        let classes = r.gen_range(2..=5);
        let mut sizes = vec![input];
        sizes.extend(hidden);
        sizes.push(classes);
        let activation = if r.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let dropout = if r.gen_bool(0.3) { 0.25 } else { 0.0 };
        let heads = if r.gen_bool(0.25) { 2 } else { 1 };
        let arch = MlpArchitecture::new(sizes, activation, dropout, heads).unwrap();
        if arch.param_count() <= max_params {
            return arch;
        }
    }
}

/// Random parameters in [-scale, scale], biases included.
pub fn random_model(arch: MlpArchitecture, r: &mut Rng, scale: f64) -> Model {
    let p: Vec<f64> = (0..arch.param_count()).map(|_| r.gen_range(-scale..scale)).collect();
    Model::new(arch, ParamVector::new(p)).unwrap()
}

pub fn random_batch(r: &mut Rng, dim: usize, classes: usize, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let xs = (0..n).map(|_| (0..dim).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let ys = (0..n).map(|_| r.gen_range(0..classes)).collect();
    (xs, ys)
}

pub fn samples<'a>(xs: &'a [Vec<f64>], ys: &[usize]) -> Vec<Sample<'a>> {
    xs.iter().zip(ys).map(|(x, &label)| Sample { features: x, label }).collect()
}

/// Central finite-difference gradient of `f` at `p`.
pub fn numeric_grad(p: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + h;
            let up = f(&q);
            q[i] = p[i] - h;
            let down = f(&q);
            q[i] = p[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor on the denominator, so coordinates
/// whose true gradient is ~0 are judged on the scale of finite-difference
/// round-off rather than by dividing noise by noise.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Top-b by rank counting: a candidate is selected iff fewer than `b` others
/// outrank it (higher score, or equal score and lower index).
pub fn top_b_oracle(cands: &[ScoredCandidate], b: usize) -> Vec<usize> {
    let mut out: Vec<usize> = cands
        .iter()
        .filter(|c| {
            let beaten_by = cands
                .iter()
                .filter(|o| o.score > c.score || (o.score == c.score && o.index < c.index))
                .count();
            beaten_by < b
        })
        .map(|c| c.index)
        .collect();
    out.sort_unstable();
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Greedy k-center recomputed from scratch at every step: the pick maximizes
/// the minimum distance to all labeled and already-picked points.
pub fn coreset_oracle(labeled: &[Vec<f64>], unlabeled: &[(usize, Vec<f64>)], b: usize) -> Vec<usize> {
    let mut centers: Vec<Vec<f64>> = labeled.to_vec();
    let mut picked: Vec<usize> = Vec::new();
    for _ in 0..b {
        let mut best: Option<(f64, usize, &Vec<f64>)> = None;
        for (idx, x) in unlabeled.iter().filter(|(i, _)| !picked.contains(i)) {
            let d = centers.iter().map(|c| dist(x, c)).fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, bi, _)) => d > bd || (d == bd && *idx < bi),
            };
            if better {
                best = Some((d, *idx, x));
            }
        }
        let (_, idx, x) = best.unwrap();
        picked.push(idx);
        centers.push(x.clone());
    }
    picked
}

/// Shannon entropy computed directly from a probability vector.
pub fn entropy_oracle(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}
