//! Datasets, client partitioning and the labeled/unlabeled pool bookkeeping.
//!
//! Pools only hold indices into a shared, immutable [`Dataset`]; annotating an
//! instance moves its index from the unlabeled set to the labeled set and
//! reveals the stored ground-truth label.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Sample;
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("a dataset needs at least one row"));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            features: self.row(i),
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> Vec<Sample<'_>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    /// Count of each label value.
    pub fn label_census(&self, indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

/// Gaussian blobs around seeded class centers.
#[derive(Clone, Debug)]
pub struct BlobGenerator {
    centers: Vec<Vec<f64>>,
    spread: f64,
}

impl BlobGenerator {
    /// Centers are drawn from a standard normal per coordinate, scaled by
    /// `center_scale`.
    pub fn new(classes: usize, dim: usize, center_scale: f64, spread: f64, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidConfig("blobs need at least one class".into()));
        }
        if dim < 2 {
            return Err(Error::InvalidConfig(format!("blob dimension must be >= 2, got {dim}")));
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(Error::InvalidConfig(format!("spread must be finite and >= 0, got {spread}")));
        }
        let mut r = rng::rng_from(seed, &[tag::DATA_CENTERS]);
        let centers = (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        center_scale * z
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        Ok(Self { centers, spread })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// `n` points with labels `i mod C` (so class counts differ by at most
    /// one), shuffled by `seed`.
    pub fn sample(&self, n: usize, seed: u64, split: Split) -> Result<Dataset> {
        let classes = self.centers.len();
        if n < classes {
            return Err(Error::InvalidConfig(format!(
                "need at least one point per class: n={n} < C={classes}"
            )));
        }
        let dim = self.centers[0].len();
        let mut r = rng::rng(seed);
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(&mut r);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut features = Vec::with_capacity(n * dim);
        for &label in &labels {
            for &c in &self.centers[label] {
                let eps: f64 = noise.sample(&mut r);
                features.push(if self.spread == 0.0 { c } else { c + self.spread * eps });
            }
        }
        Dataset::new(features, dim, labels, classes, split)
    }
}

/// `n` labeled points around `classes` seeded centers (unit-scale centers).
pub fn synth_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n < classes {
        return Err(Error::InvalidConfig(format!(
            "need at least one point per class: n={n} < C={classes}"
        )));
    }
    BlobGenerator::new(classes, dim, 1.0, spread, seed)?.sample(
        n,
        rng::derive_seed(seed, &[tag::DATA_TRAIN]),
        Split::Train,
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExternalFormat {
    /// Header-free rows `f1,...,fd,label`. Features are returned as written;
    /// see [`MinMax`] for scaling.
    CsvLabeled,
    /// IDX image file (unsigned bytes) plus its IDX label file; pixels are
    /// scaled by 1/255.
    IdxImages { labels: PathBuf },
}

/// Loads a dataset from disk. With `class_count == None` the class count is
/// inferred as `max label + 1`.
pub fn load_external(
    path: &Path,
    format: &ExternalFormat,
    class_count: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    match format {
        ExternalFormat::CsvLabeled => load_csv(path, class_count, split),
        ExternalFormat::IdxImages { labels } => load_idx(path, labels, class_count, split),
    }
}

/// Per-column min-max scaling fitted on one dataset and applied to others,
/// so train and test share the same transform. Constant columns map to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMax {
    lo: Vec<f64>,
    range: Vec<f64>,
}

impl MinMax {
    pub fn fit(ds: &Dataset) -> Self {
        let dim = ds.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in ds.features().chunks(dim) {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        Self { lo, range }
    }

    /// Maps fitted column ranges to `[0, 1]`; values outside the fitted
    /// range land outside `[0, 1]`.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.lo.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} columns, dataset has {}",
                self.lo.len(),
                ds.dim()
            )));
        }
        let features = ds
            .features()
            .chunks(ds.dim())
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| if self.range[j] > 0.0 { (v - self.lo[j]) / self.range[j] } else { 0.0 })
            })
            .collect();
        Dataset::new(features, ds.dim(), ds.labels().to_vec(), ds.class_count(), ds.split())
    }
}

fn parse_err(path: &Path, record: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        record,
        reason: reason.into(),
    }
}

fn check_labels(path: &Path, labels: &[usize], class_count: Option<usize>) -> Result<usize> {
    let inferred = labels.iter().max().map_or(0, |m| m + 1);
    match class_count {
        None => Ok(inferred),
        Some(c) => match labels.iter().position(|&l| l >= c) {
            Some(pos) => Err(parse_err(
                path,
                pos + 1,
                format!("label {} out of range for {c} classes", labels[pos]),
            )),
            None => Ok(c),
        },
    }
}

fn load_csv(path: &Path, class_count: Option<usize>, split: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err(path, lineno, "expected at least one feature and a label"));
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {expected} features, found {d}"),
                ))
            }
            _ => {}
        }
        for f in &fields[..d] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad feature value `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite feature `{f}`")));
            }
            features.push(v);
        }
        let raw = fields[d];
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label `{raw}`")))?;
        if let Some(c) = class_count {
            if label >= c {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("label {label} out of range for {c} classes"),
                ));
            }
        }
        labels.push(label);
    }
    let Some(dim) = dim else {
        return Err(parse_err(path, 0, "file contains no records"));
    };
    let classes = check_labels(path, &labels, class_count)?;
    Dataset::new(features, dim, labels, classes, split)
}

const IDX_UBYTE: u8 = 0x08;

fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(parse_err(path, 0, "truncated IDX header"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(path, 0, "bad IDX magic number"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(parse_err(
            path,
            0,
            format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(parse_err(path, 0, "IDX file declares zero dimensions"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(parse_err(path, 0, "truncated IDX dimension table"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(parse_err(
            path,
            0,
            format!("IDX body holds {} bytes, dimensions imply {expected}", body.len()),
        ));
    }
    Ok((dims, body.to_vec()))
}

fn load_idx(images: &Path, labels_path: &Path, class_count: Option<usize>, split: Split) -> Result<Dataset> {
    let (dims, pixels) = read_idx(images)?;
    let (ldims, raw_labels) = read_idx(labels_path)?;
    if ldims.len() != 1 {
        return Err(parse_err(labels_path, 0, "label file must be one-dimensional"));
    }
    let n = dims[0];
    if ldims[0] != n {
        return Err(parse_err(
            labels_path,
            0,
            format!("{} labels for {n} images", ldims[0]),
        ));
    }
    if n == 0 {
        return Err(parse_err(images, 0, "IDX file contains no records"));
    }
    let dim: usize = dims[1..].iter().product::<usize>().max(1);
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = check_labels(labels_path, &labels, class_count)?;
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(features, dim, labels, classes, split)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    IidDisjoint,
    /// Each client receives `classes_per_client` label values.
    LabelSkew { classes_per_client: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    pub client_count: usize,
    pub mode: PartitionMode,
}

/// Hook for auditing reads of client labeled data.
pub trait AccessObserver: Sync {
    fn labeled_read(&self, _client: usize, _indices: &[usize]) {}
}

/// Observer that records nothing.
pub struct NoAudit;

impl AccessObserver for NoAudit {}

/// One client's view of the training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientPools {
    client_id: usize,
    shard: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
    labeled: BTreeSet<usize>,
    initial: BTreeSet<usize>,
    history: BTreeMap<usize, Vec<usize>>,
}

impl ClientPools {
    pub fn new(client_id: usize, shard: impl IntoIterator<Item = usize>) -> Self {
        let shard: BTreeSet<usize> = shard.into_iter().collect();
        Self {
            client_id,
            unlabeled: shard.clone(),
            shard,
            labeled: BTreeSet::new(),
            initial: BTreeSet::new(),
            history: BTreeMap::new(),
        }
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn shard(&self) -> &BTreeSet<usize> {
        &self.shard
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    /// The initially labeled set.
    pub fn initial(&self) -> &BTreeSet<usize> {
        &self.initial
    }

    /// Per-round annotated selections, keyed by 1-based round.
    pub fn history(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.history
    }

    /// Labeled examples of this client, reported to `observer`.
    pub fn labeled_samples<'a>(&self, ds: &'a Dataset, observer: &dyn AccessObserver) -> Vec<Sample<'a>> {
        let indices: Vec<usize> = self.labeled.iter().copied().collect();
        observer.labeled_read(self.client_id, &indices);
        indices.into_iter().map(|i| ds.sample(i)).collect()
    }

    pub fn unlabeled_rows<'a>(&self, ds: &'a Dataset) -> Vec<&'a [f64]> {
        self.unlabeled.iter().map(|&i| ds.row(i)).collect()
    }

    fn integrity(&self, reason: impl Into<String>) -> Error {
        Error::PoolIntegrity {
            client: self.client_id,
            reason: reason.into(),
        }
    }

    /// Moves `selected` from unlabeled to labeled and records them under
    /// `round`. Returns the revealed `(index, label)` pairs.
    pub fn annotate(&mut self, selected: &[usize], round: usize, oracle: &Dataset) -> Result<Vec<(usize, usize)>> {
        let mut seen = BTreeSet::new();
        for &i in selected {
            if !seen.insert(i) {
                return Err(self.integrity(format!("index {i} selected twice")));
            }
            if self.labeled.contains(&i) {
                return Err(self.integrity(format!("index {i} is already labeled")));
            }
            if !self.unlabeled.contains(&i) {
                return Err(self.integrity(format!("index {i} does not belong to this client")));
            }
        }
        if selected.is_empty() {
            return Ok(Vec::new());
        }
        for &i in selected {
            self.unlabeled.remove(&i);
            self.labeled.insert(i);
        }
        self.history.entry(round).or_default().extend_from_slice(selected);
        Ok(selected.iter().map(|&i| (i, oracle.label(i))).collect())
    }

    /// Checks every pool invariant.
    pub fn check_invariants(&self) -> Result<()> {
        if !self.unlabeled.is_disjoint(&self.labeled) {
            return Err(self.integrity("labeled and unlabeled sets overlap"));
        }
        let union: BTreeSet<usize> = self.unlabeled.union(&self.labeled).copied().collect();
        if union != self.shard {
            return Err(self.integrity("labeled and unlabeled no longer cover the shard"));
        }
        if !self.initial.is_subset(&self.labeled) {
            return Err(self.integrity("initial labels lost"));
        }
        let mut seen = self.initial.clone();
        for (round, picked) in &self.history {
            for i in picked {
                if !self.labeled.contains(i) {
                    return Err(self.integrity(format!("round {round} pick {i} not labeled")));
                }
                if !seen.insert(*i) {
                    return Err(self.integrity(format!("round {round} pick {i} recorded twice")));
                }
            }
        }
        if seen != self.labeled {
            return Err(self.integrity("labeled set has entries without history"));
        }
        Ok(())
    }
}

/// Splits all indices of `ds` across clients. Every pool starts unlabeled.
pub fn partition(ds: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientPools>> {
    let m = spec.client_count;
    let n = ds.len();
    if m == 0 {
        return Err(Error::InvalidConfig("client count must be at least 1".into()));
    }
    if m > n {
        return Err(Error::InvalidConfig(format!("{m} clients for {n} instances")));
    }
    let mut r = rng::rng_from(seed, &[tag::PARTITION]);
    let shards: Vec<Vec<usize>> = match spec.mode {
        PartitionMode::IidDisjoint => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            let (base, extra) = (n / m, n % m);
            let mut start = 0;
            (0..m)
                .map(|c| {
                    let len = base + usize::from(c < extra);
                    let shard = order[start..start + len].to_vec();
                    start += len;
                    shard
                })
                .collect()
        }
        PartitionMode::LabelSkew { classes_per_client } => {
            label_skew_shards(ds, m, classes_per_client, &mut r)?
        }
    };
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(c, s)| ClientPools::new(c, s))
        .collect())
}

/// Client `c` owns classes `(c*k + j) mod C` for `j < k`; each class is split
/// evenly among the clients that own it.
fn label_skew_shards(ds: &Dataset, m: usize, k: usize, r: &mut rng::Rng) -> Result<Vec<Vec<usize>>> {
    let classes = ds.class_count();
    if k == 0 || k > classes {
        return Err(Error::InvalidConfig(format!(
            "classes per client must lie in 1..={classes}, got {k}"
        )));
    }
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for c in 0..m {
        for j in 0..k {
            let class = (c * k + j) % classes;
            if !owners[class].contains(&c) {
                owners[class].push(c);
            }
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for i in 0..ds.len() {
        by_class[ds.label(i)].push(i);
    }
    let mut shards = vec![Vec::new(); m];
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if owners[class].is_empty() {
            return Err(Error::InvalidConfig(format!(
                "label_skew with {m} clients x {k} classes leaves class {class} unassigned"
            )));
        }
        members.shuffle(r);
        let holders = &owners[class];
        let (base, extra) = (members.len() / holders.len(), members.len() % holders.len());
        let mut start = 0;
        for (h, &client) in holders.iter().enumerate() {
            let len = base + usize::from(h < extra);
            shards[client].extend_from_slice(&members[start..start + len]);
            start += len;
        }
    }
    if let Some(empty) = shards.iter().position(Vec::is_empty) {
        return Err(Error::InvalidConfig(format!("client {empty} received no data")));
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

/// Number of initial labels for a shard: `fraction * len` rounded half to even.
pub fn initial_label_count(shard_len: usize, fraction: f64) -> usize {
    (fraction * shard_len as f64).round_ties_even() as usize
}

/// Labels `round(fraction * |shard|)` uniformly chosen indices per client.
pub fn seed_initial_labels(pools: &mut [ClientPools], fraction: f64, seed: u64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "initial label fraction must lie in (0, 1], got {fraction}"
        )));
    }
    for pool in pools.iter() {
        if !pool.labeled.is_empty() {
            return Err(Error::InvalidState(format!(
                "client {} already has labels",
                pool.client_id
            )));
        }
        if initial_label_count(pool.shard.len(), fraction) < 1 {
            return Err(Error::InvalidConfig(format!(
                "fraction {fraction} of client {}'s {} instances labels nothing",
                pool.client_id,
                pool.shard.len()
            )));
        }
    }
    for pool in pools.iter_mut() {
        let count = initial_label_count(pool.shard.len(), fraction);
        let mut r = rng::rng_from(seed, &[tag::INITIAL_LABELS, pool.client_id as u64]);
        let candidates: Vec<usize> = pool.unlabeled.iter().copied().collect();
        let chosen: Vec<usize> = candidates.choose_multiple(&mut r, count).copied().collect();
        for &i in &chosen {
            pool.unlabeled.remove(&i);
            pool.labeled.insert(i);
            pool.initial.insert(i);
        }
    }
    Ok(())
}
