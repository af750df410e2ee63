//! The annotation pipelines: random sampling, separate active learning
//! (each client scores with a model trained on its own labels) and federated
//! active learning (every client scores with one FedAvg-trained model).
//!
//! A round is a barrier pipeline:
//!
//! 1. train the scoring model(s) on the current labeled sets,
//! 2. every client selects its per-round quota from its own unlabeled pool,
//! 3. the selections are annotated,
//! 4. a main-task model is trained by FedAvg from a fresh initialization and
//!    evaluated on the test set.
//!
//! Client labeled sets are never merged; the only view of their union is the
//! model FedAvg produces.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AccessObserver, ClientPools, Dataset, NoAudit};
use crate::error::{Error, Result};
use crate::fed::{evaluate, fedavg, fedavg_with, independent_train, FedConfig, Federation};
use crate::nn::{MlpArchitecture, Model};
use crate::rng::{self, tag};
use crate::strategies::{select_from_pool, DiscrepancyTrainer, ScorerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    SAl,
    FAl,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::SAl => "s_al",
            Strategy::FAl => "f_al",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    /// Annotation budget `b_m` of each client over all rounds.
    pub budgets: Vec<usize>,
    pub scorer: ScorerKind,
    /// Training of auxiliary models that are not the main task model: the
    /// per-client models of S-AL and the discrepancy heads.
    pub aux_train: FedConfig,
    /// Re-initialize auxiliary models every round instead of warm-starting.
    pub fresh_init_per_round: bool,
    pub discrepancy_weight: f64,
}

impl AlConfig {
    /// `b_m / K` for client `m`.
    pub fn quota(&self, client: usize) -> usize {
        self.budgets[client] / self.rounds
    }

    pub fn validate(&self, pools: &[ClientPools]) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.budgets.len() != pools.len() {
            return Err(Error::InvalidConfig(format!(
                "{} budgets for {} clients",
                self.budgets.len(),
                pools.len()
            )));
        }
        self.scorer.validate()?;
        self.aux_train.validate()?;
        if !self.discrepancy_weight.is_finite() || self.discrepancy_weight < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "discrepancy weight must be finite and >= 0, got {}",
                self.discrepancy_weight
            )));
        }
        for (m, (pool, &b)) in pools.iter().zip(&self.budgets).enumerate() {
            if b % self.rounds != 0 {
                return Err(Error::InvalidConfig(format!(
                    "client {m}: budget {b} is not a multiple of {} rounds (per-round quota must be integral)",
                    self.rounds
                )));
            }
            if b > pool.unlabeled().len() {
                return Err(Error::Budget(format!(
                    "client {m}: budget {b} exceeds its {} unlabeled instances",
                    pool.unlabeled().len()
                )));
            }
        }
        Ok(())
    }
}

/// Emitted whenever a client scores its pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoringEvent {
    pub round: usize,
    pub client: usize,
    pub model_fingerprint: u64,
    /// Clients whose labeled data trained the scoring model.
    pub trained_on: Vec<usize>,
}

/// Audit hooks for a run.
pub trait Observer: AccessObserver {
    fn scored(&self, _event: &ScoringEvent) {}
}

impl Observer for NoAudit {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub labeled_counts: Vec<usize>,
    pub test_accuracy: f64,
    pub global_iters_used: usize,
    /// Fingerprints of the scoring models used this round (one per client for
    /// S-AL, one shared for F-AL, none for random).
    pub aux_fingerprints: Vec<u64>,
    /// Per-client test accuracy of independently trained local models, when
    /// tracking is on.
    pub independent_accuracies: Option<Vec<f64>>,
    pub wall_time: Duration,
    pub seed: u64,
}

impl RoundLog {
    pub fn labeled_total(&self) -> usize {
        self.labeled_counts.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub logs: Vec<RoundLog>,
    pub pools: Vec<ClientPools>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndependentEval {
    pub per_client: Vec<f64>,
    pub mean: f64,
}

/// Everything shared by the pipelines of one experiment.
#[derive(Clone)]
pub struct Simulation<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    /// Main task model architecture.
    pub arch: MlpArchitecture,
    /// FedAvg settings of the main task model.
    pub main: FedConfig,
    /// Settings for a client training alone.
    pub independent: FedConfig,
    pub al: AlConfig,
    /// Record independent-learning accuracies every round.
    pub track_independent: bool,
    pub observer: &'a dyn Observer,
}

struct Seeds {
    init: u64,
    train: u64,
    base: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        Self {
            init: rng::derive_seed(seed, &[tag::MODEL_INIT]),
            train: rng::derive_seed(seed, &[tag::FED_TRAIN]),
            base: seed,
        }
    }

    fn scoring(&self, round: usize, client: usize) -> u64 {
        rng::derive_seed(self.base, &[tag::SCORING, round as u64, client as u64])
    }

    fn random_quota(&self, round: usize, client: usize) -> u64 {
        rng::derive_seed(self.base, &[tag::RANDOM_QUOTA, round as u64, client as u64])
    }
}

fn at_round(k: usize) -> impl Fn(Error) -> Error {
    move |e| e.context(format!("round {k}"))
}

impl<'a> Simulation<'a> {
    fn federation<'p>(&self, pools: &'p [ClientPools]) -> Federation<'p>
    where
        'a: 'p,
    {
        Federation::new(self.train, pools).with_observer(self.observer)
    }

    fn aux_arch(&self) -> Result<MlpArchitecture> {
        match self.al.scorer {
            ScorerKind::Discrepancy => self.arch.clone().with_heads(2),
            _ => Ok(self.arch.clone()),
        }
    }

    /// Main task model trained by FedAvg on the current labeled sets from the
    /// per-run initialization.
    fn train_main(&self, pools: &[ClientPools], seeds: &Seeds) -> Result<(Model, usize)> {
        let init = Model::init(self.arch.clone(), seeds.init);
        let report = fedavg(&self.federation(pools), &init, &self.main, seeds.train)?;
        Ok((report.final_model, report.global_iters_used))
    }

    fn discrepancy_trainer(&self) -> DiscrepancyTrainer {
        DiscrepancyTrainer {
            local_epochs: self.al.aux_train.local_epochs,
            minibatch: self.al.aux_train.minibatch,
            weight: self.al.discrepancy_weight,
        }
    }

    /// Auxiliary model of S-AL client `m`: trained on that client alone.
    fn local_aux(&self, pool: &ClientPools, init: &Model, seeds: &Seeds) -> Result<Model> {
        let fed = Federation {
            dataset: self.train,
            pools: std::slice::from_ref(pool),
            observer: self.observer,
        };
        let report = match self.al.scorer {
            ScorerKind::Discrepancy => {
                fedavg_with(&fed, init, &self.al.aux_train, &self.discrepancy_trainer(), seeds.train)?
            }
            _ => independent_train(self.train, pool, init, &self.al.aux_train, seeds.train, self.observer)?,
        };
        Ok(report.final_model)
    }

    fn check_initial_labels(&self, pools: &[ClientPools]) -> Result<()> {
        if let Some(p) = pools.iter().find(|p| p.labeled().is_empty()) {
            return Err(Error::InvalidState(format!(
                "client {} has no initial labels; active learning needs a labeled seed set",
                p.client_id()
            )));
        }
        Ok(())
    }

    fn validate(&self, strategy: Strategy, pools: &[ClientPools]) -> Result<()> {
        if self.al.strategy != strategy {
            return Err(Error::InvalidConfig(format!(
                "configured strategy is {}, not {strategy}",
                self.al.strategy
            )));
        }
        self.main.validate()?;
        self.independent.validate()?;
        self.al.validate(pools)?;
        if strategy != Strategy::Random {
            if self.al.scorer == ScorerKind::Random {
                return Err(Error::InvalidConfig(format!(
                    "{strategy} needs an informativeness scorer, not random"
                )));
            }
            if let ScorerKind::McDropout { .. } = self.al.scorer {
                if self.arch.dropout_rate() == 0.0 {
                    log::warn!("MC-dropout with dropout rate 0 degenerates to entropy scoring");
                }
            }
            self.check_initial_labels(pools)?;
        }
        Ok(())
    }

    fn annotate_all(&self, pools: &mut [ClientPools], picks: Vec<Vec<usize>>, round: usize) -> Result<()> {
        for (pool, picked) in pools.iter_mut().zip(picks) {
            pool.annotate(&picked, round, self.train)?;
        }
        Ok(())
    }

    fn finish_round(
        &self,
        pools: &[ClientPools],
        round: usize,
        seeds: &Seeds,
        aux_fingerprints: Vec<u64>,
        started: Instant,
    ) -> Result<(RoundLog, Model)> {
        let (model, iters) = self.train_main(pools, seeds)?;
        let test_accuracy = evaluate(&model, self.test)?;
        let independent_accuracies = if self.track_independent {
            Some(self.independent_eval_with(pools, seeds)?.per_client)
        } else {
            None
        };
        let log = RoundLog {
            round,
            labeled_counts: pools.iter().map(|p| p.labeled().len()).collect(),
            test_accuracy,
            global_iters_used: iters,
            aux_fingerprints,
            independent_accuracies,
            wall_time: started.elapsed(),
            seed: seeds.base,
        };
        Ok((log, model))
    }

    /// Dispatches on the configured strategy.
    pub fn run(&self, pools: Vec<ClientPools>, seed: u64) -> Result<RunOutput> {
        match self.al.strategy {
            Strategy::Random => self.run_random(pools, seed),
            Strategy::SAl => self.run_sal(pools, seed),
            Strategy::FAl => self.run_fal(pools, seed),
        }
    }

    /// Each round every client labels a uniformly random quota.
    pub fn run_random(&self, mut pools: Vec<ClientPools>, seed: u64) -> Result<RunOutput> {
        self.validate(Strategy::Random, &pools)?;
        let seeds = Seeds::new(seed);
        let placeholder = Model::zeros(self.arch.clone());
        let mut logs = Vec::with_capacity(self.al.rounds);
        for k in 1..=self.al.rounds {
            let started = Instant::now();
            let picks = pools
                .iter()
                .enumerate()
                .map(|(m, pool)| {
                    select_from_pool(
                        ScorerKind::Random,
                        &placeholder,
                        self.train,
                        pool,
                        self.al.quota(m),
                        seeds.random_quota(k, m),
                    )
                })
                .collect::<Result<Vec<_>>>()
                .map_err(at_round(k))?;
            self.annotate_all(&mut pools, picks, k).map_err(at_round(k))?;
            let (log, _) = self.finish_round(&pools, k, &seeds, Vec::new(), started)
                .map_err(at_round(k))?;
            logs.push(log);
        }
        Ok(RunOutput { logs, pools })
    }

    /// Separate AL: client `m` scores its pool with a model trained only on
    /// its own labels.
    pub fn run_sal(&self, mut pools: Vec<ClientPools>, seed: u64) -> Result<RunOutput> {
        self.validate(Strategy::SAl, &pools)?;
        let seeds = Seeds::new(seed);
        let aux_arch = self.aux_arch()?;
        let fresh = Model::init(aux_arch, seeds.init);
        let mut previous: Vec<Model> = vec![fresh.clone(); pools.len()];
        let mut logs = Vec::with_capacity(self.al.rounds);
        for k in 1..=self.al.rounds {
            let started = Instant::now();
            let results: Vec<(Vec<usize>, Model)> = pools
                .par_iter()
                .enumerate()
                .map(|(m, pool)| {
                    let init = if self.al.fresh_init_per_round { &fresh } else { &previous[m] };
                    let aux = self.local_aux(pool, init, &seeds)?;
                    self.observer.scored(&ScoringEvent {
                        round: k,
                        client: pool.client_id(),
                        model_fingerprint: aux.params().fingerprint(),
                        trained_on: vec![pool.client_id()],
                    });
                    let picked = select_from_pool(
                        self.al.scorer,
                        &aux,
                        self.train,
                        pool,
                        self.al.quota(m),
                        seeds.scoring(k, m),
                    )?;
                    Ok((picked, aux))
                })
                .collect::<Result<_>>()
                .map_err(at_round(k))?;
            let (picks, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            let fingerprints = models.iter().map(|m| m.params().fingerprint()).collect();
            previous = models;
            self.annotate_all(&mut pools, picks, k).map_err(at_round(k))?;
            let (log, _) = self.finish_round(&pools, k, &seeds, fingerprints, started)
                .map_err(at_round(k))?;
            logs.push(log);
        }
        Ok(RunOutput { logs, pools })
    }

    /// Federated AL: one model trained by FedAvg on all clients' labels scores
    /// every client's pool; each client still selects only its own quota.
    pub fn run_fal(&self, mut pools: Vec<ClientPools>, seed: u64) -> Result<RunOutput> {
        self.validate(Strategy::FAl, &pools)?;
        let seeds = Seeds::new(seed);
        let participants: Vec<usize> = pools.iter().map(ClientPools::client_id).collect();
        let aux_arch = self.aux_arch()?;
        let fresh = Model::init(aux_arch, seeds.init);
        // With task-aware scorers and fresh initialization the scoring model
        // for round k is exactly the main model evaluated after round k-1.
        let reuse_main = self.al.scorer.uses_task_model() && self.al.fresh_init_per_round;
        let mut carried: Option<Model> = None;
        let mut logs = Vec::with_capacity(self.al.rounds);
        for k in 1..=self.al.rounds {
            let started = Instant::now();
            let aux = match (reuse_main, carried.take()) {
                (true, Some(model)) => model,
                (true, None) => self.train_main(&pools, &seeds).map_err(at_round(k))?.0,
                (false, previous) => {
                    let init = if self.al.fresh_init_per_round {
                        fresh.clone()
                    } else {
                        previous.unwrap_or_else(|| fresh.clone())
                    };
                    let fed = self.federation(&pools);
                    let report = match self.al.scorer {
                        ScorerKind::Discrepancy => fedavg_with(
                            &fed,
                            &init,
                            &self.al.aux_train,
                            &self.discrepancy_trainer(),
                            seeds.train,
                        ),
                        _ => fedavg(&fed, &init, &self.main, seeds.train),
                    }
                    .map_err(at_round(k))?;
                    report.final_model
                }
            };
            let fingerprint = aux.params().fingerprint();
            let picks = pools
                .par_iter()
                .enumerate()
                .map(|(m, pool)| {
                    self.observer.scored(&ScoringEvent {
                        round: k,
                        client: pool.client_id(),
                        model_fingerprint: aux.params().fingerprint(),
                        trained_on: participants.clone(),
                    });
                    select_from_pool(
                        self.al.scorer,
                        &aux,
                        self.train,
                        pool,
                        self.al.quota(m),
                        seeds.scoring(k, m),
                    )
                })
                .collect::<Result<Vec<_>>>()
                .map_err(at_round(k))?;
            self.annotate_all(&mut pools, picks, k).map_err(at_round(k))?;
            let (log, main_model) = self.finish_round(&pools, k, &seeds, vec![fingerprint], started)
                .map_err(at_round(k))?;
            logs.push(log);
            carried = Some(if reuse_main { main_model } else { aux });
        }
        Ok(RunOutput { logs, pools })
    }

    /// Reference run with every instance of every client labeled.
    pub fn run_full_budget(&self, mut pools: Vec<ClientPools>, seed: u64) -> Result<RoundLog> {
        self.main.validate()?;
        let seeds = Seeds::new(seed);
        let started = Instant::now();
        let picks = pools
            .iter()
            .map(|p| p.unlabeled().iter().copied().collect())
            .collect();
        self.annotate_all(&mut pools, picks, 1)?;
        Ok(self.finish_round(&pools, 1, &seeds, Vec::new(), started)?.0)
    }

    fn independent_eval_with(&self, pools: &[ClientPools], seeds: &Seeds) -> Result<IndependentEval> {
        let init = Model::init(self.arch.clone(), seeds.init);
        let per_client: Vec<f64> = pools
            .par_iter()
            .map(|pool| {
                let report = independent_train(self.train, pool, &init, &self.independent, seeds.train, self.observer)?;
                evaluate(&report.final_model, self.test)
            })
            .collect::<Result<_>>()?;
        let mean = per_client.iter().sum::<f64>() / per_client.len() as f64;
        Ok(IndependentEval { per_client, mean })
    }

    /// Every client trains the main task model alone on its labeled set; the
    /// accuracies are measured on the shared test set.
    pub fn run_independent_eval(&self, pools: &[ClientPools], seed: u64) -> Result<IndependentEval> {
        self.independent.validate()?;
        self.check_initial_labels(pools)?;
        self.independent_eval_with(pools, &Seeds::new(seed))
    }
}
