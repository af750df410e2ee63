//! Informativeness scores and the selection rules built on them.
//!
//! Scores are always computed against a client's own unlabeled pool. Every
//! scorer except MC-dropout uses deterministic forward passes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPools, Dataset};
use crate::error::{Error, Result};
use crate::fed::{ClientView, LocalOutcome, LocalTrainer, Minibatch};
use crate::nn::{sgd_step, Model, Sample};
use crate::rng::{self, tag, Rng};

pub const DEFAULT_MC_PASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScorerKind {
    Random,
    Entropy,
    McDropout { passes: usize },
    Discrepancy,
    Coreset,
}

impl ScorerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScorerKind::Random => "random",
            ScorerKind::Entropy => "entropy",
            ScorerKind::McDropout { .. } => "mc_dropout",
            ScorerKind::Discrepancy => "discrepancy",
            ScorerKind::Coreset => "coreset",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScorerKind::McDropout { passes: 0 } => {
                Err(Error::InvalidConfig("MC-dropout needs at least one pass".into()))
            }
            _ => Ok(()),
        }
    }

    /// Scorers whose auxiliary model is the main task model itself.
    pub fn uses_task_model(&self) -> bool {
        matches!(
            self,
            ScorerKind::Entropy | ScorerKind::McDropout { .. } | ScorerKind::Coreset
        )
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    /// Parses a scorer name; MC-dropout gets [`DEFAULT_MC_PASSES`].
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => ScorerKind::Random,
            "entropy" => ScorerKind::Entropy,
            "mc_dropout" => ScorerKind::McDropout {
                passes: DEFAULT_MC_PASSES,
            },
            "discrepancy" => ScorerKind::Discrepancy,
            "coreset" => ScorerKind::Coreset,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown scorer `{other}` (expected random, entropy, mc_dropout, discrepancy or coreset)"
                )))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub index: usize,
    pub score: f64,
}

/// Shannon entropy in nats, clamped to `[0, ln C]`.
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.clamp(0.0, (probs.len() as f64).ln())
}

/// Predictive entropy of head 0.
pub fn score_entropy(model: &Model, x: &[f64]) -> Result<f64> {
    let probs = model.forward(x, None)?;
    Ok(entropy(&probs[0]))
}

/// Entropy of the mean head-0 prediction over `passes` dropout-enabled
/// forward passes.
pub fn score_mc_dropout(model: &Model, x: &[f64], passes: usize, rng: &mut Rng) -> Result<f64> {
    if passes == 0 {
        return Err(Error::InvalidConfig("MC-dropout needs at least one pass".into()));
    }
    let mut mean = model.forward(x, Some(rng))?.swap_remove(0);
    for t in 2..=passes {
        let p = model.forward(x, Some(rng))?.swap_remove(0);
        // running mean: identical passes reproduce the single pass exactly
        for (m, pi) in mean.iter_mut().zip(&p) {
            *m += (pi - *m) / t as f64;
        }
    }
    Ok(entropy(&mean))
}

/// L1 distance between the two heads' predictions, in `[0, 2]`.
pub fn score_discrepancy(model: &Model, x: &[f64]) -> Result<f64> {
    if model.arch().head_count() != 2 {
        return Err(Error::InvalidModel(format!(
            "discrepancy scoring needs a two-head model, got {} head(s)",
            model.arch().head_count()
        )));
    }
    let probs = model.forward(x, None)?;
    Ok(l1(&probs[0], &probs[1]))
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        .clamp(0.0, 2.0)
}

/// Uniform score in `[0, 1)`.
pub fn score_random(rng: &mut Rng) -> f64 {
    rng.gen::<f64>()
}

/// The `b` highest-scoring candidates, lowest index first on ties, returned
/// in ascending index order.
pub fn select_top_b(candidates: &[ScoredCandidate], b: usize) -> Result<Vec<usize>> {
    if b > candidates.len() {
        return Err(Error::Budget(format!(
            "asked for {b} instances from {} candidates",
            candidates.len()
        )));
    }
    if let Some(c) = candidates.iter().find(|c| !c.score.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite score {} for index {}",
            c.score, c.index
        )));
    }
    let mut ranked: Vec<&ScoredCandidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    let mut picked: Vec<usize> = ranked[..b].iter().map(|c| c.index).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// A dataset instance in some feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub index: usize,
    pub coords: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center: repeatedly takes the unlabeled point farthest (Euclidean)
/// from the labeled points and the points already taken. Ties go to the lowest
/// index. Returns indices in pick order.
pub fn coreset_greedy(labeled: &[Vec<f64>], unlabeled: &[Point], b: usize) -> Result<Vec<usize>> {
    if labeled.is_empty() {
        return Err(Error::InvalidState("core-set selection needs labeled points".into()));
    }
    if b > unlabeled.len() {
        return Err(Error::Budget(format!(
            "asked for {b} instances from {} candidates",
            unlabeled.len()
        )));
    }
    let mut nearest: Vec<f64> = unlabeled
        .iter()
        .map(|u| {
            labeled
                .iter()
                .map(|l| sq_dist(&u.coords, l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; unlabeled.len()];
    let mut picks = Vec::with_capacity(b);
    for _ in 0..b {
        let mut best: Option<usize> = None;
        for (j, u) in unlabeled.iter().enumerate() {
            if taken[j] {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(k) if nearest[j] > nearest[k] => Some(j),
                Some(k) if nearest[j] == nearest[k] && u.index < unlabeled[k].index => Some(j),
                keep => keep,
            };
        }
        let chosen = best.expect("b <= number of candidates");
        taken[chosen] = true;
        picks.push(unlabeled[chosen].index);
        let center = &unlabeled[chosen].coords;
        for (j, u) in unlabeled.iter().enumerate() {
            if !taken[j] {
                nearest[j] = nearest[j].min(sq_dist(&u.coords, center));
            }
        }
    }
    Ok(picks)
}

/// Knobs for discrepancy-head training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscrepancyTraining {
    pub epochs: usize,
    pub minibatch: Minibatch,
    pub lr: f64,
    /// Coefficient of the discrepancy term relative to cross-entropy.
    pub weight: f64,
}

/// Trains a two-head model: cross-entropy on `labeled` through both heads and
/// the trunk, plus a head-only step that increases the mean L1 disagreement of
/// the heads on `unlabeled`.
pub fn train_discrepancy_heads(
    model: &Model,
    labeled: &[Sample<'_>],
    unlabeled: &[&[f64]],
    cfg: &DiscrepancyTraining,
    rng: &mut Rng,
) -> Result<Model> {
    if model.arch().head_count() != 2 {
        return Err(Error::InvalidModel(format!(
            "discrepancy training needs a two-head model, got {} head(s)",
            model.arch().head_count()
        )));
    }
    if labeled.is_empty() {
        return Err(Error::EmptyInput("discrepancy training needs labeled data"));
    }
    if unlabeled.is_empty() && cfg.epochs > 0 {
        log::warn!("no unlabeled data: training discrepancy heads on labeled data only");
    }
    let chunk = match cfg.minibatch {
        Minibatch::Full => labeled.len(),
        Minibatch::Size(s) => s.clamp(1, labeled.len()),
    };
    let steps_per_epoch = labeled.len().div_ceil(chunk);
    let u_chunk = if unlabeled.is_empty() {
        0
    } else {
        unlabeled.len().div_ceil(steps_per_epoch)
    };
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut u_order: Vec<usize> = (0..unlabeled.len()).collect();
    for _ in 0..cfg.epochs {
        if chunk < labeled.len() {
            order.shuffle(rng);
            u_order.shuffle(rng);
        }
        for (step, idx) in order.chunks(chunk).enumerate() {
            let batch: Vec<Sample> = idx.iter().map(|&i| labeled[i]).collect();
            let mut g = current.grad(&batch, Some(rng))?;
            if u_chunk > 0 {
                let lo = (step * u_chunk).min(unlabeled.len());
                let hi = ((step + 1) * u_chunk).min(unlabeled.len());
                if lo < hi {
                    let xs: Vec<&[f64]> = u_order[lo..hi].iter().map(|&i| unlabeled[i]).collect();
                    let (_, dg) = current.head_discrepancy_grad(&xs, cfg.weight, Some(rng))?;
                    g.as_mut_slice()
                        .iter_mut()
                        .zip(dg.as_slice())
                        .for_each(|(a, b)| *a += b);
                }
            }
            let next = sgd_step(current.params(), &g, cfg.lr)?;
            current = current.with_params(next)?;
        }
    }
    Ok(current)
}

/// Mean head disagreement over `xs`.
pub fn mean_discrepancy(model: &Model, xs: &[&[f64]]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no points to measure discrepancy on"));
    }
    let mut total = 0.0;
    for x in xs {
        total += score_discrepancy(model, x)?;
    }
    Ok(total / xs.len() as f64)
}

/// Local trainer that runs [`train_discrepancy_heads`] on the client's own
/// labeled and unlabeled pools.
#[derive(Clone, Copy, Debug)]
pub struct DiscrepancyTrainer {
    pub local_epochs: usize,
    pub minibatch: Minibatch,
    pub weight: f64,
}

impl LocalTrainer for DiscrepancyTrainer {
    fn train(&self, model: &Model, client: ClientView<'_>, lr: f64, rng: &mut Rng) -> Result<LocalOutcome> {
        let labeled = client.pool.labeled_samples(client.dataset, client.observer);
        let unlabeled = client.pool.unlabeled_rows(client.dataset);
        let cfg = DiscrepancyTraining {
            epochs: self.local_epochs,
            minibatch: self.minibatch,
            lr,
            weight: self.weight,
        };
        let trained = train_discrepancy_heads(model, &labeled, &unlabeled, &cfg, rng)?;
        let loss = trained.loss(&labeled, None)?;
        Ok(LocalOutcome {
            params: trained.params().clone(),
            loss,
        })
    }
}

/// Scores every unlabeled instance of `pool` against `model`. Instance `i`
/// draws its randomness from the stream keyed by `(seed, i)`.
pub fn score_pool(kind: ScorerKind, model: &Model, ds: &Dataset, pool: &ClientPools, seed: u64) -> Result<Vec<ScoredCandidate>> {
    kind.validate()?;
    pool.unlabeled()
        .iter()
        .map(|&index| {
            let x = ds.row(index);
            let r = || rng::rng_from(seed, &[tag::SCORING, index as u64]);
            let score = match kind {
                ScorerKind::Random => score_random(&mut r()),
                ScorerKind::Entropy => score_entropy(model, x)?,
                ScorerKind::McDropout { passes } => score_mc_dropout(model, x, passes, &mut r())?,
                ScorerKind::Discrepancy => score_discrepancy(model, x)?,
                ScorerKind::Coreset => {
                    return Err(Error::InvalidConfig(
                        "core-set is a set objective; use select_from_pool".into(),
                    ))
                }
            };
            Ok(ScoredCandidate { index, score })
        })
        .collect()
}

/// Picks `quota` instances from `pool`'s unlabeled set with `kind`, scored
/// against `model`.
pub fn select_from_pool(
    kind: ScorerKind,
    model: &Model,
    ds: &Dataset,
    pool: &ClientPools,
    quota: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if quota > pool.unlabeled().len() {
        return Err(Error::Budget(format!(
            "client {} must annotate {quota} but only {} instances remain",
            pool.client_id(),
            pool.unlabeled().len()
        )));
    }
    if quota == 0 {
        return Ok(Vec::new());
    }
    match kind {
        ScorerKind::Coreset => {
            let labeled: Vec<Vec<f64>> = pool
                .labeled()
                .iter()
                .map(|&i| model.embed(ds.row(i)))
                .collect::<Result<_>>()?;
            let unlabeled: Vec<Point> = pool
                .unlabeled()
                .iter()
                .map(|&index| {
                    Ok(Point {
                        index,
                        coords: model.embed(ds.row(index))?,
                    })
                })
                .collect::<Result<_>>()?;
            coreset_greedy(&labeled, &unlabeled, quota)
        }
        _ => select_top_b(&score_pool(kind, model, ds, pool, seed)?, quota),
    }
}
