//! Experiment configuration: a TOML document, optionally layered over a named
//! preset, validated into an [`ExperimentConfig`] before any training runs.
//!
//! ```toml
//! seed = 7
//! repeats = 5
//! output = "results.csv"
//!
//! [dataset]
//! kind = "blobs"          # blobs | csv | idx
//! train = 3000
//! test = 1000
//! classes = 8
//! dim = 2
//!
//! [partition]
//! clients = 3
//! mode = "iid_disjoint"   # or label_skew with classes_per_client
//! initial_fraction = 0.1
//!
//! [model]
//! hidden = [32]
//!
//! [fl]                    # main-task FedAvg
//! lr = 0.1
//! decay = 0.997
//!
//! [al]
//! strategies = ["random", "s_al", "f_al"]
//! scorers = ["entropy"]
//! rounds = 5
//! budget = 300            # total b, split evenly; or budgets = [..] per client
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::presets;
use crate::data::{PartitionMode, PartitionSpec};
use crate::error::{Error, Result};
use crate::fed::{FedConfig, Minibatch};
use crate::nn::{Activation, LrSchedule, MlpArchitecture};
use crate::strategies::{ScorerKind, DEFAULT_MC_PASSES};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    preset: Option<String>,
    seed: u64,
    repeats: usize,
    output: PathBuf,
    dataset: RawDataset,
    partition: RawPartition,
    model: RawModel,
    fl: RawFed,
    independent: RawFed,
    al: RawAl,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seed: 0,
            repeats: 1,
            output: PathBuf::from("results.csv"),
            dataset: RawDataset::default(),
            partition: RawPartition::default(),
            model: RawModel::default(),
            fl: RawFed::default(),
            independent: RawFed {
                lr: 0.02,
                ..RawFed::default()
            },
            al: RawAl::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDataset {
    kind: String,
    // blobs
    train: usize,
    test: usize,
    classes: Option<usize>,
    dim: usize,
    spread: f64,
    center_scale: f64,
    // csv
    train_path: Option<PathBuf>,
    test_path: Option<PathBuf>,
    // idx
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    /// Keep only the first `limit` training rows of an external dataset.
    limit: Option<usize>,
}

impl Default for RawDataset {
    fn default() -> Self {
        Self {
            kind: "blobs".into(),
            train: 3000,
            test: 1000,
            classes: None,
            dim: 2,
            spread: 0.3,
            center_scale: 2.0,
            train_path: None,
            test_path: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            limit: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPartition {
    clients: usize,
    mode: String,
    classes_per_client: Option<usize>,
    initial_fraction: f64,
}

impl Default for RawPartition {
    fn default() -> Self {
        Self {
            clients: 3,
            mode: "iid_disjoint".into(),
            classes_per_client: None,
            initial_fraction: 0.1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    hidden: Vec<usize>,
    activation: Activation,
    dropout: f64,
}

impl Default for RawModel {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawFed {
    lr: f64,
    decay: f64,
    local_epochs: usize,
    minibatch: Minibatch,
    stop_loss: f64,
    max_global_iters: usize,
}

impl Default for RawFed {
    fn default() -> Self {
        Self {
            lr: 0.1,
            decay: 0.997,
            local_epochs: 1,
            minibatch: Minibatch::Size(16),
            stop_loss: 0.01,
            max_global_iters: 200,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAl {
    strategies: Vec<String>,
    scorers: Vec<String>,
    rounds: usize,
    budget: Option<usize>,
    budgets: Option<Vec<usize>>,
    mc_passes: usize,
    fresh_init_per_round: bool,
    discrepancy_weight: f64,
    track_independent: bool,
    aux: Option<RawFed>,
}

impl Default for RawAl {
    fn default() -> Self {
        Self {
            strategies: vec!["random".into(), "s_al".into(), "f_al".into()],
            scorers: vec!["entropy".into()],
            rounds: 5,
            budget: None,
            budgets: None,
            mc_passes: DEFAULT_MC_PASSES,
            fresh_init_per_round: true,
            discrepancy_weight: 1.0,
            track_independent: false,
            aux: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        train: usize,
        test: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        center_scale: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        classes: Option<usize>,
        limit: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: Option<usize>,
        limit: Option<usize>,
    },
}

/// Strategy column of a result table; `FullBudget` is the all-labeled
/// reference run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyChoice {
    Random,
    SAl,
    FAl,
    FullBudget,
}

impl StrategyChoice {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyChoice::Random => "random",
            StrategyChoice::SAl => "s_al",
            StrategyChoice::FAl => "f_al",
            StrategyChoice::FullBudget => "full_budget",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "random" => StrategyChoice::Random,
            "s_al" => StrategyChoice::SAl,
            "f_al" => StrategyChoice::FAl,
            "full_budget" => StrategyChoice::FullBudget,
            _ => return None,
        })
    }
}

/// One (strategy, scorer) combination to run for every repeat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunSpec {
    pub strategy: StrategyChoice,
    /// `None` for the full-budget reference.
    pub scorer: Option<ScorerKind>,
}

impl RunSpec {
    pub fn scorer_name(&self) -> &'static str {
        self.scorer.map_or("none", |s| s.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Budgets {
    /// Total budget `b`, split as `b / M` per client.
    Total(usize),
    PerClient(Vec<usize>),
}

impl Budgets {
    pub fn per_client(&self, clients: usize) -> Result<Vec<usize>> {
        match self {
            Budgets::Total(b) => {
                if b % clients != 0 {
                    return Err(Error::config(
                        "al.budget",
                        format!("total budget {b} does not split evenly across {clients} clients"),
                    ));
                }
                Ok(vec![b / clients; clients])
            }
            Budgets::PerClient(v) => Ok(v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub seed: u64,
    pub repeats: usize,
    pub output: PathBuf,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    pub initial_fraction: f64,
    pub arch: MlpArchitecture,
    pub main: FedConfig,
    pub independent: FedConfig,
    pub aux: FedConfig,
    pub runs: Vec<RunSpec>,
    pub rounds: usize,
    pub budgets: Vec<usize>,
    pub fresh_init_per_round: bool,
    pub discrepancy_weight: f64,
    pub track_independent: bool,
}

impl ExperimentConfig {
    /// Per-round quota of client `m`.
    pub fn quota(&self, client: usize) -> usize {
        self.budgets[client] / self.rounds
    }

    /// Provenance statement for full-scale presets.
    pub fn provenance_note(&self) -> Option<String> {
        self.preset.as_deref().and_then(presets::provenance_note)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub scorer: Option<String>,
}

pub(super) fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn section<'t>(table: &'t mut toml::Table, name: &str) -> &'t mut toml::Table {
    let entry = table
        .entry(name.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if !entry.is_table() {
        *entry = toml::Value::Table(toml::Table::new());
    }
    entry.as_table_mut().expect("just ensured a table")
}

fn apply_overrides(table: &mut toml::Table, o: &Overrides) -> Result<()> {
    if let Some(out) = &o.output {
        table.insert("output".into(), toml::Value::String(out.display().to_string()));
    }
    if let Some(r) = o.repeats {
        let r = i64::try_from(r).map_err(|_| Error::config("repeats", "value too large"))?;
        table.insert("repeats".into(), toml::Value::Integer(r));
    }
    if let Some(s) = o.seed {
        let s = i64::try_from(s).map_err(|_| Error::config("seed", "value too large for TOML"))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    if let Some(s) = &o.strategy {
        section(table, "al").insert(
            "strategies".into(),
            toml::Value::Array(vec![toml::Value::String(s.clone())]),
        );
    }
    if let Some(s) = &o.scorer {
        section(table, "al").insert(
            "scorers".into(),
            toml::Value::Array(vec![toml::Value::String(s.clone())]),
        );
    }
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config(bytes: &[u8]) -> Result<ExperimentConfig> {
    parse_config_with(bytes, &Overrides::default())
}

pub fn parse_config_with(bytes: &[u8], overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::config("<file>", format!("not UTF-8: {e}")))?;
    let user: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    let mut table = match user.get("preset") {
        Some(toml::Value::String(name)) => {
            let src = presets::source(name).ok_or_else(|| {
                Error::config(
                    "preset",
                    format!("unknown preset `{name}` (known: {})", presets::NAMES.join(", ")),
                )
            })?;
            src.parse::<toml::Table>().expect("presets are valid TOML")
        }
        Some(_) => return Err(Error::config("preset", "expected a preset name")),
        None => toml::Table::new(),
    };
    merge(&mut table, user);
    apply_overrides(&mut table, overrides)?;
    let raw: RawConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.into_inner().message().to_string())
    })?;
    validate(raw)
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_config_with(&bytes, overrides)
}

fn fed(raw: &RawFed, key: &str) -> Result<FedConfig> {
    let schedule = LrSchedule::new(raw.lr, raw.decay).map_err(|e| Error::config(format!("{key}.lr"), e.to_string()))?;
    let cfg = FedConfig {
        local_epochs: raw.local_epochs,
        minibatch: raw.minibatch,
        schedule,
        stop_loss_threshold: raw.stop_loss,
        max_global_iters: raw.max_global_iters,
    };
    if raw.local_epochs == 0 {
        return Err(Error::config(format!("{key}.local_epochs"), "must be >= 1"));
    }
    if raw.stop_loss.is_nan() || raw.stop_loss <= 0.0 {
        return Err(Error::config(format!("{key}.stop_loss"), "must be positive"));
    }
    if raw.max_global_iters == 0 {
        return Err(Error::config(format!("{key}.max_global_iters"), "must be >= 1"));
    }
    Ok(cfg)
}

fn required(v: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::config(key, "required for this dataset kind"))
}

fn dataset(raw: RawDataset) -> Result<DatasetSpec> {
    Ok(match raw.kind.as_str() {
        "blobs" => {
            let classes = raw.classes.unwrap_or(8);
            if classes == 0 {
                return Err(Error::config("dataset.classes", "must be >= 1"));
            }
            if raw.dim < 2 {
                return Err(Error::config("dataset.dim", "must be >= 2"));
            }
            if raw.train < classes {
                return Err(Error::config("dataset.train", "needs at least one point per class"));
            }
            if raw.test == 0 {
                return Err(Error::config("dataset.test", "must be >= 1"));
            }
            if !(raw.spread >= 0.0 && raw.spread.is_finite()) {
                return Err(Error::config("dataset.spread", "must be finite and >= 0"));
            }
            DatasetSpec::Blobs {
                train: raw.train,
                test: raw.test,
                classes,
                dim: raw.dim,
                spread: raw.spread,
                center_scale: raw.center_scale,
            }
        }
        "csv" => DatasetSpec::Csv {
            train: required(raw.train_path, "dataset.train_path")?,
            test: required(raw.test_path, "dataset.test_path")?,
            classes: raw.classes,
            limit: raw.limit,
        },
        "idx" => DatasetSpec::Idx {
            train_images: required(raw.train_images, "dataset.train_images")?,
            train_labels: required(raw.train_labels, "dataset.train_labels")?,
            test_images: required(raw.test_images, "dataset.test_images")?,
            test_labels: required(raw.test_labels, "dataset.test_labels")?,
            classes: raw.classes,
            limit: raw.limit,
        },
        other => {
            return Err(Error::config(
                "dataset.kind",
                format!("unknown kind `{other}` (expected blobs, csv or idx)"),
            ))
        }
    })
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig> {
    if raw.repeats == 0 {
        return Err(Error::config("repeats", "must be >= 1"));
    }
    if raw.seed.checked_add(raw.repeats as u64).is_none() {
        return Err(Error::config("seed", "seed + repeats overflows"));
    }
    let input_dim = match raw.dataset.kind.as_str() {
        "blobs" => Some(raw.dataset.dim),
        _ => None,
    };
    let blob_classes = raw.dataset.classes;
    let dataset = dataset(raw.dataset)?;

    let p = &raw.partition;
    if p.clients == 0 {
        return Err(Error::config("partition.clients", "must be >= 1"));
    }
    let mode = match p.mode.as_str() {
        "iid_disjoint" => {
            if p.classes_per_client.is_some() {
                return Err(Error::config(
                    "partition.classes_per_client",
                    "only meaningful with mode = \"label_skew\"",
                ));
            }
            PartitionMode::IidDisjoint
        }
        "label_skew" => PartitionMode::LabelSkew {
            classes_per_client: p.classes_per_client.ok_or_else(|| {
                Error::config("partition.classes_per_client", "required for label_skew")
            })?,
        },
        other => {
            return Err(Error::config(
                "partition.mode",
                format!("unknown mode `{other}` (expected iid_disjoint or label_skew)"),
            ))
        }
    };
    if !(p.initial_fraction > 0.0 && p.initial_fraction <= 1.0) {
        return Err(Error::config("partition.initial_fraction", "must lie in (0, 1]"));
    }

    let m = &raw.model;
    if m.hidden.contains(&0) {
        return Err(Error::config("model.hidden", "layer widths must be positive"));
    }
    if !(0.0..1.0).contains(&m.dropout) {
        return Err(Error::config("model.dropout", "must lie in [0, 1)"));
    }
    // External datasets fix the input width and class count at load time; the
    // architecture is re-derived then. Blobs know both now.
    let mut sizes = vec![input_dim.unwrap_or(1)];
    sizes.extend(&m.hidden);
    sizes.push(blob_classes.unwrap_or(8).max(1));
    let arch = MlpArchitecture::new(sizes, m.activation, m.dropout, 1)
        .map_err(|e| Error::config("model", e.to_string()))?;

    let main = fed(&raw.fl, "fl")?;
    let independent = fed(&raw.independent, "independent")?;
    let aux = match &raw.al.aux {
        Some(a) => fed(a, "al.aux")?,
        None => independent,
    };

    let al = raw.al;
    if al.rounds == 0 {
        return Err(Error::config("al.rounds", "must be >= 1"));
    }
    if al.mc_passes == 0 {
        return Err(Error::config("al.mc_passes", "must be >= 1"));
    }
    if !(al.discrepancy_weight >= 0.0 && al.discrepancy_weight.is_finite()) {
        return Err(Error::config("al.discrepancy_weight", "must be finite and >= 0"));
    }
    if al.strategies.is_empty() {
        return Err(Error::config("al.strategies", "at least one strategy is required"));
    }
    let budgets = match (al.budget, al.budgets) {
        (Some(_), Some(_)) => {
            return Err(Error::config("al.budgets", "set either al.budget or al.budgets, not both"))
        }
        (Some(b), None) => Budgets::Total(b),
        (None, Some(v)) => {
            if v.len() != p.clients {
                return Err(Error::config(
                    "al.budgets",
                    format!("{} entries for {} clients", v.len(), p.clients),
                ));
            }
            Budgets::PerClient(v)
        }
        (None, None) => Budgets::Total(default_budget(&dataset, p.clients, al.rounds)),
    };
    let budgets = budgets.per_client(p.clients)?;
    for (c, b) in budgets.iter().enumerate() {
        if b % al.rounds != 0 {
            return Err(Error::config(
                if al.budget.is_some() { "al.budget" } else { "al.budgets" },
                format!(
                    "client {c}: budget {b} / {} rounds is not integral (each round must annotate an equal whole quota)",
                    al.rounds
                ),
            ));
        }
    }

    let mut scorers = Vec::new();
    for (i, name) in al.scorers.iter().enumerate() {
        let mut s: ScorerKind = name
            .parse()
            .map_err(|e: Error| Error::config(format!("al.scorers[{i}]"), e.to_string()))?;
        if let ScorerKind::McDropout { passes } = &mut s {
            *passes = al.mc_passes;
        }
        scorers.push(s);
    }
    let mut runs = Vec::new();
    for (i, name) in al.strategies.iter().enumerate() {
        let key = format!("al.strategies[{i}]");
        let strategy = StrategyChoice::parse(name).ok_or_else(|| {
            Error::config(
                key.clone(),
                format!("unknown strategy `{name}` (expected random, s_al, f_al or full_budget)"),
            )
        })?;
        match strategy {
            StrategyChoice::Random => runs.push(RunSpec {
                strategy,
                scorer: Some(ScorerKind::Random),
            }),
            StrategyChoice::FullBudget => runs.push(RunSpec { strategy, scorer: None }),
            StrategyChoice::SAl | StrategyChoice::FAl => {
                let informative: Vec<_> = scorers.iter().filter(|s| **s != ScorerKind::Random).collect();
                if informative.is_empty() {
                    return Err(Error::config(
                        "al.scorers",
                        format!("{name} needs at least one non-random scorer"),
                    ));
                }
                for s in informative {
                    if matches!(s, ScorerKind::McDropout { .. }) && m.dropout == 0.0 {
                        return Err(Error::config(
                            "model.dropout",
                            "mc_dropout scoring needs a positive dropout rate",
                        ));
                    }
                    runs.push(RunSpec {
                        strategy,
                        scorer: Some(*s),
                    });
                }
            }
        }
    }
    runs.sort();
    runs.dedup();

    Ok(ExperimentConfig {
        preset: raw.preset,
        seed: raw.seed,
        repeats: raw.repeats,
        output: raw.output,
        dataset,
        partition: PartitionSpec {
            client_count: p.clients,
            mode,
        },
        initial_fraction: p.initial_fraction,
        arch,
        main,
        independent,
        aux,
        runs,
        rounds: al.rounds,
        budgets,
        fresh_init_per_round: al.fresh_init_per_round,
        discrepancy_weight: al.discrepancy_weight,
        track_independent: al.track_independent,
    })
}

/// Default total budget: a tenth of the training set, rounded down to a
/// multiple of `M * K`.
fn default_budget(ds: &DatasetSpec, clients: usize, rounds: usize) -> usize {
    let n = match ds {
        DatasetSpec::Blobs { train, .. } => *train,
        DatasetSpec::Csv { limit, .. } | DatasetSpec::Idx { limit, .. } => limit.unwrap_or(0),
    };
    let step = clients * rounds;
    (n / 10) / step * step
}
