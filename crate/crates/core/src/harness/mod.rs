//! Experiment runner: configuration, repeated seeded runs and CSV output.

mod config;
pub mod presets;
mod table;

use rayon::prelude::*;

pub use config::{
    load_config, parse_config, parse_config_with, Budgets, DatasetSpec, ExperimentConfig, Overrides, RunSpec,
    StrategyChoice,
};
pub use table::{
    companion_path, emit_csv, IndependentRow, ResultRow, ResultTable, SummaryRow, CSV_HEADER, INDEPENDENT_HEADER,
    SUMMARY_HEADER,
};

use crate::data::{
    load_external, partition, seed_initial_labels, BlobGenerator, ClientPools, Dataset, ExternalFormat, MinMax,
    NoAudit, Split,
};
use crate::error::{Error, Result};
use crate::nn::MlpArchitecture;
use crate::orchestrator::{AlConfig, RoundLog, Simulation, Strategy};
use crate::rng::{self, tag};
use crate::strategies::ScorerKind;

/// Data and initial pools of one repeat.
pub struct Prepared {
    pub repeat: usize,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub arch: MlpArchitecture,
    pub pools: Vec<ClientPools>,
}

fn truncate(ds: Dataset, limit: Option<usize>) -> Result<Dataset> {
    match limit {
        Some(n) if n < ds.len() => {
            let dim = ds.dim();
            Dataset::new(
                ds.features()[..n * dim].to_vec(),
                dim,
                ds.labels()[..n].to_vec(),
                ds.class_count(),
                ds.split(),
            )
        }
        _ => Ok(ds),
    }
}

/// Builds the train and test sets for one seed.
pub fn build_data(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Blobs {
            train,
            test,
            classes,
            dim,
            spread,
            center_scale,
        } => {
            let g = BlobGenerator::new(*classes, *dim, *center_scale, *spread, seed)?;
            Ok((
                g.sample(*train, rng::derive_seed(seed, &[tag::DATA_TRAIN]), Split::Train)?,
                g.sample(*test, rng::derive_seed(seed, &[tag::DATA_TEST]), Split::Test)?,
            ))
        }
        DatasetSpec::Csv {
            train,
            test,
            classes,
            limit,
        } => {
            let tr = load_external(train, &ExternalFormat::CsvLabeled, *classes, Split::Train)?;
            let te = load_external(test, &ExternalFormat::CsvLabeled, Some(tr.class_count()), Split::Test)?;
            let tr = truncate(tr, *limit)?;
            let scaler = MinMax::fit(&tr);
            Ok((scaler.apply(&tr)?, scaler.apply(&te)?))
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
            limit,
        } => {
            let tr = load_external(
                train_images,
                &ExternalFormat::IdxImages {
                    labels: train_labels.clone(),
                },
                *classes,
                Split::Train,
            )?;
            let te = load_external(
                test_images,
                &ExternalFormat::IdxImages {
                    labels: test_labels.clone(),
                },
                Some(tr.class_count()),
                Split::Test,
            )?;
            Ok((truncate(tr, *limit)?, te))
        }
    }
}

fn arch_for(cfg: &ExperimentConfig, train: &Dataset) -> Result<MlpArchitecture> {
    let mut sizes = cfg.arch.layer_sizes().to_vec();
    sizes[0] = train.dim();
    *sizes.last_mut().expect("at least two layers") = train.class_count();
    MlpArchitecture::new(sizes, cfg.arch.activation(), cfg.arch.dropout_rate(), 1)
}

impl ExperimentConfig {
    /// Seed of repeat `r` (1-based).
    pub fn repeat_seed(&self, r: usize) -> u64 {
        self.seed + r as u64
    }

    /// AL settings of one strategy/scorer combination. The full-budget
    /// reference does no selection and gets the random settings.
    pub fn al_config(&self, run: &RunSpec) -> AlConfig {
        let strategy = match run.strategy {
            StrategyChoice::Random | StrategyChoice::FullBudget => Strategy::Random,
            StrategyChoice::SAl => Strategy::SAl,
            StrategyChoice::FAl => Strategy::FAl,
        };
        AlConfig {
            strategy,
            rounds: self.rounds,
            budgets: self.budgets.clone(),
            scorer: run.scorer.unwrap_or(ScorerKind::Random),
            aux_train: self.aux,
            fresh_init_per_round: self.fresh_init_per_round,
            discrepancy_weight: self.discrepancy_weight,
        }
    }

    /// Simulation of one combination over prepared data.
    pub fn simulation<'a>(&self, p: &'a Prepared, run: &RunSpec) -> Simulation<'a> {
        Simulation {
            train: &p.train,
            test: &p.test,
            arch: p.arch.clone(),
            main: self.main,
            independent: self.independent,
            al: self.al_config(run),
            track_independent: self.track_independent,
            observer: &NoAudit,
        }
    }

    /// Builds data and initial pools of repeat `r` and checks every
    /// configured combination against them.
    pub fn prepare(&self, repeat: usize) -> Result<Prepared> {
        let seed = self.repeat_seed(repeat);
        let (train, test) = build_data(&self.dataset, seed)?;
        let arch = arch_for(self, &train).map_err(|e| Error::config("model", e.to_string()))?;
        let mut pools = partition(&train, &self.partition, seed).map_err(|e| Error::config("partition", e.to_string()))?;
        seed_initial_labels(&mut pools, self.initial_fraction, seed)
            .map_err(|e| Error::config("partition.initial_fraction", e.to_string()))?;
        for run in self.runs.iter().filter(|r| r.strategy != StrategyChoice::FullBudget) {
            self.al_config(run)
                .validate(&pools)
                .map_err(|e| Error::config("al.budget", e.to_string()))?;
        }
        Ok(Prepared {
            repeat,
            seed,
            train,
            test,
            arch,
            pools,
        })
    }
}

fn rows_from_logs(
    run: &RunSpec,
    p: &Prepared,
    logs: &[RoundLog],
    out: &mut Vec<ResultRow>,
    independent: &mut Vec<IndependentRow>,
) {
    let n = p.train.len() as f64;
    for log in logs {
        out.push(ResultRow {
            strategy: run.strategy.name().into(),
            scorer: run.scorer_name().into(),
            round: log.round,
            repeat: p.repeat,
            labeled_fraction: log.labeled_total() as f64 / n,
            test_accuracy: log.test_accuracy,
        });
        for (client, acc) in log.independent_accuracies.iter().flatten().enumerate() {
            independent.push(IndependentRow {
                strategy: run.strategy.name().into(),
                scorer: run.scorer_name().into(),
                round: log.round,
                repeat: p.repeat,
                client,
                test_accuracy: *acc,
            });
        }
    }
}

fn run_one(cfg: &ExperimentConfig, p: &Prepared, run: &RunSpec) -> Result<(Vec<ResultRow>, Vec<IndependentRow>)> {
    let sim = cfg.simulation(p, run);
    let logs = match run.strategy {
        StrategyChoice::FullBudget => {
            let log = sim.run_full_budget(p.pools.clone(), p.seed)?;
            // One reference value, repeated so every combination has K rows.
            (1..=cfg.rounds)
                .map(|k| RoundLog {
                    round: k,
                    independent_accuracies: None,
                    ..log.clone()
                })
                .collect()
        }
        _ => sim.run(p.pools.clone(), p.seed)?.logs,
    };
    let mut rows = Vec::new();
    let mut independent = Vec::new();
    rows_from_logs(run, p, &logs, &mut rows, &mut independent);
    Ok((rows, independent))
}

/// Runs every configured strategy/scorer combination for every repeat.
///
/// All repeats are built and validated before any model is trained, so a
/// configuration that cannot run fails without spending compute.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let prepared: Vec<Prepared> = (1..=cfg.repeats)
        .map(|r| cfg.prepare(r).map_err(|e| e.context(format!("repeat {r}"))))
        .collect::<Result<_>>()?;
    let jobs: Vec<(&Prepared, &RunSpec)> = prepared
        .iter()
        .flat_map(|p| cfg.runs.iter().map(move |run| (p, run)))
        .collect();
    let results: Vec<(Vec<ResultRow>, Vec<IndependentRow>)> = jobs
        .par_iter()
        .map(|(p, run)| {
            log::info!("{} / {}: repeat {}", run.strategy.name(), run.scorer_name(), p.repeat);
            run_one(cfg, p, run).map_err(|e| {
                e.context(format!(
                    "strategy {}, scorer {}, repeat {}",
                    run.strategy.name(),
                    run.scorer_name(),
                    p.repeat
                ))
            })
        })
        .collect::<Result<_>>()?;
    let (rows, independent): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(ResultTable::new(rows.into_iter().flatten().collect())
        .with_independent(independent.into_iter().flatten().collect()))
}
