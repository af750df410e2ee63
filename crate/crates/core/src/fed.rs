//! FedAvg executor: local SGD on every client holding labels, a
//! sample-count-weighted parameter average on the server, per-iteration
//! learning-rate decay and a loss-threshold stop.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{AccessObserver, ClientPools, Dataset, NoAudit};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, LrSchedule, Model, ParamVector, Sample};
use crate::rng::{self, tag, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Minibatch {
    #[default]
    Full,
    Size(usize),
}

impl Serialize for Minibatch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Minibatch::Full => s.serialize_str("full"),
            Minibatch::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Minibatch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Size(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Size(0) => Err(serde::de::Error::custom("minibatch size must be >= 1")),
            Raw::Size(n) => Ok(Minibatch::Size(n)),
            Raw::Name(s) if s == "full" => Ok(Minibatch::Full),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "expected \"full\" or a positive integer, got \"{s}\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub local_epochs: usize,
    pub minibatch: Minibatch,
    pub schedule: LrSchedule,
    /// Training stops once the sample-weighted mean client loss drops below
    /// this value. `f64::INFINITY` stops after one iteration.
    pub stop_loss_threshold: f64,
    pub max_global_iters: usize,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("local_epochs must be >= 1".into()));
        }
        if self.minibatch == Minibatch::Size(0) {
            return Err(Error::InvalidConfig("minibatch size must be >= 1".into()));
        }
        self.schedule.validate()?;
        if self.stop_loss_threshold.is_nan() || self.stop_loss_threshold <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "stop_loss_threshold must be positive, got {}",
                self.stop_loss_threshold
            )));
        }
        if self.max_global_iters == 0 {
            return Err(Error::InvalidConfig("max_global_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FedRunReport {
    pub final_model: Model,
    pub global_iters_used: usize,
    /// Sample-weighted mean client training loss after each global iteration.
    pub loss_trace: Vec<f64>,
}

/// Coordinate-wise average of `models` weighted by `weights[m] / sum(weights)`,
/// accumulated in client order. Zero weights are allowed as long as the sum is
/// positive; a zero-weight client contributes nothing.
pub fn weighted_average(models: &[ParamVector], weights: &[usize]) -> Result<ParamVector> {
    let Some(first) = models.first() else {
        return Err(Error::EmptyInput("weighted_average needs at least one model"));
    };
    if models.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if let Some(bad) = models.iter().find(|m| m.len() != first.len()) {
        return Err(Error::Shape(format!(
            "parameter lengths differ: {} vs {}",
            first.len(),
            bad.len()
        )));
    }
    let total: usize = weights.iter().sum();
    if total == 0 {
        return Err(Error::InvalidState("all aggregation weights are zero".into()));
    }
    let total = total as f64;
    let mut out = vec![0.0; first.len()];
    let mut lo = vec![f64::INFINITY; first.len()];
    let mut hi = vec![f64::NEG_INFINITY; first.len()];
    for (model, &w) in models.iter().zip(weights) {
        if w == 0 {
            continue;
        }
        let frac = w as f64 / total;
        for (i, &v) in model.as_slice().iter().enumerate() {
            out[i] += frac * v;
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    // rounding can push a convex combination one ulp outside the hull
    for i in 0..out.len() {
        out[i] = out[i].clamp(lo[i], hi[i]);
    }
    Ok(ParamVector::new(out))
}

/// `local_epochs` passes of minibatch SGD at a fixed learning rate.
pub fn local_update(
    model: &Model,
    labeled: &[Sample<'_>],
    lr: f64,
    cfg: &FedConfig,
    rng: &mut Rng,
) -> Result<ParamVector> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("client has no labeled data"));
    }
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let chunk = match cfg.minibatch {
        Minibatch::Full => labeled.len(),
        Minibatch::Size(s) => s.min(labeled.len()),
    };
    for _ in 0..cfg.local_epochs {
        if chunk < labeled.len() {
            order.shuffle(rng);
        }
        for idx in order.chunks(chunk) {
            let batch: Vec<Sample> = idx.iter().map(|&i| labeled[i]).collect();
            let g = current.grad(&batch, Some(rng))?;
            let next = sgd_step(current.params(), &g, lr)?;
            current = current.with_params(next)?;
        }
    }
    Ok(current.params().clone())
}

/// Everything a local trainer may touch on one client.
#[derive(Clone, Copy)]
pub struct ClientView<'a> {
    pub pool: &'a ClientPools,
    pub dataset: &'a Dataset,
    pub observer: &'a dyn AccessObserver,
}

pub struct LocalOutcome {
    pub params: ParamVector,
    /// Epoch-end training loss on the client's full labeled set.
    pub loss: f64,
}

/// Client-side step of a FedAvg iteration.
pub trait LocalTrainer: Sync {
    fn train(&self, model: &Model, client: ClientView<'_>, lr: f64, rng: &mut Rng) -> Result<LocalOutcome>;
}

/// Plain supervised minibatch SGD.
#[derive(Clone, Copy, Debug)]
pub struct SupervisedSgd {
    pub cfg: FedConfig,
}

impl LocalTrainer for SupervisedSgd {
    fn train(&self, model: &Model, client: ClientView<'_>, lr: f64, rng: &mut Rng) -> Result<LocalOutcome> {
        let labeled = client.pool.labeled_samples(client.dataset, client.observer);
        let params = local_update(model, &labeled, lr, &self.cfg, rng)?;
        let loss = model.with_params(params.clone())?.loss(&labeled, None)?;
        Ok(LocalOutcome { params, loss })
    }
}

/// The clients taking part in a federated training run.
#[derive(Clone, Copy)]
pub struct Federation<'a> {
    pub dataset: &'a Dataset,
    pub pools: &'a [ClientPools],
    pub observer: &'a dyn AccessObserver,
}

impl<'a> Federation<'a> {
    pub fn new(dataset: &'a Dataset, pools: &'a [ClientPools]) -> Self {
        Self {
            dataset,
            pools,
            observer: &NoAudit,
        }
    }

    pub fn with_observer(mut self, observer: &'a dyn AccessObserver) -> Self {
        self.observer = observer;
        self
    }
}

/// Runs FedAvg from `init` with the supervised local trainer.
pub fn fedavg(fed: &Federation<'_>, init: &Model, cfg: &FedConfig, seed: u64) -> Result<FedRunReport> {
    fedavg_with(fed, init, cfg, &SupervisedSgd { cfg: *cfg }, seed)
}

/// Runs FedAvg with a custom local trainer. Clients without labels sit out
/// with weight zero. Client `m` at iteration `t` draws from the stream keyed
/// by `(seed, m, t)`, so results do not depend on thread scheduling.
pub fn fedavg_with(
    fed: &Federation<'_>,
    init: &Model,
    cfg: &FedConfig,
    trainer: &dyn LocalTrainer,
    seed: u64,
) -> Result<FedRunReport> {
    cfg.validate()?;
    let participants: Vec<&ClientPools> = fed.pools.iter().filter(|p| !p.labeled().is_empty()).collect();
    if participants.is_empty() {
        return Err(Error::InvalidState("no client holds labeled data".into()));
    }
    let weights: Vec<usize> = participants.iter().map(|p| p.labeled().len()).collect();
    let total: usize = weights.iter().sum();

    let mut global = init.clone();
    let mut trace = Vec::new();
    for t in 1..=cfg.max_global_iters {
        let lr = cfg.schedule.lr(t);
        let outcomes: Vec<LocalOutcome> = participants
            .par_iter()
            .map(|pool| {
                let mut r = rng::rng_from(seed, &[tag::FED_TRAIN, pool.client_id() as u64, t as u64]);
                let view = ClientView {
                    pool,
                    dataset: fed.dataset,
                    observer: fed.observer,
                };
                trainer.train(&global, view, lr, &mut r)
            })
            .collect::<Result<_>>()?;
        let loss = outcomes
            .iter()
            .zip(&weights)
            .map(|(o, &w)| o.loss * w as f64)
            .sum::<f64>()
            / total as f64;
        let params: Vec<ParamVector> = outcomes.into_iter().map(|o| o.params).collect();
        global = global.with_params(weighted_average(&params, &weights)?)?;
        trace.push(loss);
        if loss < cfg.stop_loss_threshold {
            break;
        }
    }
    Ok(FedRunReport {
        final_model: global,
        global_iters_used: trace.len(),
        loss_trace: trace,
    })
}

/// One client training on its own labeled set. Equivalent to FedAvg over a
/// federation containing only that client, so the schedule decays once per
/// round of `local_epochs` epochs.
pub fn independent_train(
    dataset: &Dataset,
    pool: &ClientPools,
    init: &Model,
    cfg: &FedConfig,
    seed: u64,
    observer: &dyn AccessObserver,
) -> Result<FedRunReport> {
    if pool.labeled().is_empty() {
        return Err(Error::InvalidState(format!(
            "client {} has no labeled data",
            pool.client_id()
        )));
    }
    let fed = Federation {
        dataset,
        pools: std::slice::from_ref(pool),
        observer,
    };
    fedavg(&fed, init, cfg, seed)
}

/// Fraction of test rows whose head-0 arg-max matches the label.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set is empty"));
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        if model.predict(test.row(i))? == test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}
