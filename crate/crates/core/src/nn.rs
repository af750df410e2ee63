//! Feed-forward MLP with optional inverted dropout and one or more softmax
//! heads sharing a trunk.
//!
//! Parameters live in one flat [`ParamVector`]. Layout, in order: every trunk
//! layer, then every head. Each layer stores its weights row-major with shape
//! `(fan_out, fan_in)` followed by `fan_out` biases.
//!
//! All arithmetic is `f64` and every reduction runs in a fixed index order, so
//! results are bit-reproducible for a given input and rng state.

use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
    dropout_rate: f64,
    head_count: usize,
}

#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl LayerSlot {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

impl MlpArchitecture {
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Activation,
        dropout_rate: f64,
        head_count: usize,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        if head_count == 0 {
            return Err(Error::InvalidConfig("head count must be at least 1".into()));
        }
        Ok(Self {
            layer_sizes,
            activation,
            dropout_rate,
            head_count,
        })
    }

    /// Single-head ReLU classifier without dropout.
    pub fn classifier(layer_sizes: Vec<usize>) -> Result<Self> {
        Self::new(layer_sizes, Activation::Relu, 0.0, 1)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_dropout(self, dropout_rate: f64) -> Result<Self> {
        Self::new(self.layer_sizes, self.activation, dropout_rate, self.head_count)
    }

    pub fn with_heads(self, head_count: usize) -> Result<Self> {
        Self::new(self.layer_sizes, self.activation, self.dropout_rate, head_count)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// Width of the representation fed to the heads (the input itself when
    /// there is no hidden layer).
    pub fn embedding_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    fn hidden_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    fn trunk_slots(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        (0..self.hidden_count())
            .map(|l| {
                let slot = LayerSlot {
                    offset,
                    fan_in: self.layer_sizes[l],
                    fan_out: self.layer_sizes[l + 1],
                };
                offset += slot.len();
                slot
            })
            .collect()
    }

    fn trunk_len(&self) -> usize {
        self.trunk_slots().iter().map(LayerSlot::len).sum()
    }

    fn head_slot(&self, head: usize) -> LayerSlot {
        let fan_in = self.embedding_dim();
        let fan_out = self.class_count();
        LayerSlot {
            offset: self.trunk_len() + head * fan_out * (fan_in + 1),
            fan_in,
            fan_out,
        }
    }

    /// Parameter range owned by the heads (everything after the trunk).
    pub fn head_param_range(&self) -> std::ops::Range<usize> {
        self.trunk_len()..self.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.trunk_len() + self.head_count * self.class_count() * (self.embedding_dim() + 1)
    }

    fn slots(&self) -> impl Iterator<Item = LayerSlot> + '_ {
        self.trunk_slots()
            .into_iter()
            .chain((0..self.head_count).map(|h| self.head_slot(h)))
    }
}

/// Flat model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// FNV-1a over the IEEE bit patterns; equal fingerprints for equal bytes.
    pub fn fingerprint(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for v in &self.0 {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    arch: MlpArchitecture,
    params: ParamVector,
}

impl Model {
    pub fn new(arch: MlpArchitecture, params: ParamVector) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let params = ParamVector::zeros(arch.param_count());
        Self { arch, params }
    }

    pub fn init(arch: MlpArchitecture, seed: u64) -> Self {
        let params = init_params(&arch, seed);
        Self { arch, params }
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::new(self.arch.clone(), params)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::InputShape {
                expected: self.arch.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn layer(&self, slot: LayerSlot, input: &[f64]) -> Vec<f64> {
        let p = self.params.as_slice();
        let w = &p[slot.weights()];
        let b = &p[slot.biases()];
        (0..slot.fan_out)
            .map(|o| {
                let row = &w[o * slot.fan_in..(o + 1) * slot.fan_in];
                row.iter().zip(input).fold(b[o], |acc, (wi, xi)| acc + wi * xi)
            })
            .collect()
    }

    fn trace(&self, x: &[f64], mut rng: Option<&mut Rng>) -> Trace {
        let p = self.arch.dropout_rate;
        let keep_scale = 1.0 / (1.0 - p);
        let mut trace = Trace {
            activations: vec![x.to_vec()],
            pre: Vec::with_capacity(self.arch.hidden_count()),
            masks: Vec::with_capacity(self.arch.hidden_count()),
            logits: Vec::with_capacity(self.arch.head_count),
        };
        for slot in self.arch.trunk_slots() {
            let z = self.layer(slot, trace.activations.last().expect("input pushed"));
            let mut a: Vec<f64> = z.iter().map(|&v| self.arch.activation.apply(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if p > 0.0 => {
                    let m: Vec<f64> = (0..a.len())
                        .map(|_| if r.gen::<f64>() < p { 0.0 } else { keep_scale })
                        .collect();
                    a.iter_mut().zip(&m).for_each(|(ai, mi)| *ai *= mi);
                    Some(m)
                }
                _ => None,
            };
            trace.pre.push(z);
            trace.masks.push(mask);
            trace.activations.push(a);
        }
        let embedding = trace.activations.last().expect("input pushed");
        for h in 0..self.arch.head_count {
            let logits = self.layer(self.arch.head_slot(h), embedding);
            trace.logits.push(logits);
        }
        trace
    }

    /// Per-head class probabilities. Dropout is applied iff `rng` is given.
    pub fn forward(&self, x: &[f64], rng: Option<&mut Rng>) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.trace(x, rng).logits.iter().map(|z| softmax(z)).collect())
    }

    /// Last hidden layer activations without dropout.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut t = self.trace(x, None);
        Ok(t.activations.pop().expect("input pushed"))
    }

    /// Arg-max class of head 0, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        let t = self.trace(x, None);
        Ok(argmax(&t.logits[0]))
    }

    /// Mean cross-entropy over the batch, averaged across heads.
    pub fn loss(&self, batch: &[Sample<'_>], rng: Option<&mut Rng>) -> Result<f64> {
        self.loss_and_grad_impl(batch, rng, false).map(|(l, _)| l)
    }

    /// Analytic gradient of [`Model::loss`] with respect to the parameters.
    pub fn grad(&self, batch: &[Sample<'_>], rng: Option<&mut Rng>) -> Result<ParamVector> {
        self.loss_and_grad(batch, rng).map(|(_, g)| g)
    }

    pub fn loss_and_grad(
        &self,
        batch: &[Sample<'_>],
        rng: Option<&mut Rng>,
    ) -> Result<(f64, ParamVector)> {
        self.loss_and_grad_impl(batch, rng, true)
            .map(|(l, g)| (l, g.expect("gradient requested")))
    }

    fn loss_and_grad_impl(
        &self,
        batch: &[Sample<'_>],
        mut rng: Option<&mut Rng>,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamVector>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("loss needs a non-empty batch"));
        }
        let classes = self.arch.class_count();
        for s in batch {
            self.check_input(s.features)?;
            if s.label >= classes {
                return Err(Error::Shape(format!(
                    "label {} out of range for {classes} classes",
                    s.label
                )));
            }
        }
        let heads = self.arch.head_count as f64;
        let scale = 1.0 / (batch.len() as f64 * heads);
        let mut total = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; self.arch.param_count()]);
        for s in batch {
            let trace = self.trace(s.features, rng.as_deref_mut());
            let mut dlogits = Vec::with_capacity(trace.logits.len());
            for z in &trace.logits {
                let lse = log_sum_exp(z);
                total += lse - z[s.label];
                if want_grad {
                    let mut d: Vec<f64> = z.iter().map(|&zi| (zi - lse).exp() * scale).collect();
                    d[s.label] -= scale;
                    dlogits.push(d);
                }
            }
            if let Some(g) = grad.as_mut() {
                self.backward(&trace, &dlogits, true, g);
            }
        }
        let loss = (total * scale).max(0.0);
        Ok((loss, grad.map(ParamVector)))
    }

    /// Accumulates into `grad` the gradient induced by `dlogits` (one vector
    /// per head). With `through_trunk == false` only head parameters receive
    /// gradient.
    fn backward(&self, trace: &Trace, dlogits: &[Vec<f64>], through_trunk: bool, grad: &mut [f64]) {
        let p = self.params.as_slice();
        let embedding = trace.activations.last().expect("input pushed");
        let mut d_embed = vec![0.0; embedding.len()];
        for (h, d) in dlogits.iter().enumerate() {
            let slot = self.arch.head_slot(h);
            accumulate_layer(slot, p, embedding, d, grad, through_trunk.then_some(&mut d_embed));
        }
        if !through_trunk {
            return;
        }
        let slots = self.arch.trunk_slots();
        let mut d_act = d_embed;
        for (l, slot) in slots.iter().enumerate().rev() {
            let z = &trace.pre[l];
            let out = &trace.activations[l + 1];
            let dz: Vec<f64> = (0..slot.fan_out)
                .map(|j| {
                    let (d_h, h) = match &trace.masks[l] {
                        Some(m) if m[j] == 0.0 => return 0.0,
                        Some(m) => (d_act[j] * m[j], out[j] / m[j]),
                        None => (d_act[j], out[j]),
                    };
                    d_h * self.arch.activation.derivative(z[j], h)
                })
                .collect();
            let input = &trace.activations[l];
            let mut d_in = vec![0.0; slot.fan_in];
            accumulate_layer(*slot, p, input, &dz, grad, (l > 0).then_some(&mut d_in));
            d_act = d_in;
        }
    }

    /// Gradient of `-weight * mean_u L1(p_A(u), p_B(u))` with respect to the
    /// head parameters only, plus the mean L1 discrepancy itself.
    pub(crate) fn head_discrepancy_grad(
        &self,
        xs: &[&[f64]],
        weight: f64,
        mut rng: Option<&mut Rng>,
    ) -> Result<(f64, ParamVector)> {
        if self.arch.head_count != 2 {
            return Err(Error::InvalidModel(format!(
                "discrepancy needs exactly 2 heads, model has {}",
                self.arch.head_count
            )));
        }
        if xs.is_empty() {
            return Err(Error::EmptyInput("discrepancy needs unlabeled points"));
        }
        let scale = weight / xs.len() as f64;
        let mut grad = vec![0.0; self.arch.param_count()];
        let mut total = 0.0;
        for x in xs {
            self.check_input(x)?;
            let trace = self.trace(x, rng.as_deref_mut());
            let pa = softmax(&trace.logits[0]);
            let pb = softmax(&trace.logits[1]);
            let sign: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| sign(a - b)).collect();
            total += pa.iter().zip(&pb).map(|(a, b)| (a - b).abs()).sum::<f64>();
            // d/dz_A sum|pA-pB| = pA*(s - <pA,s>), d/dz_B = -pB*(s - <pB,s>);
            // the objective is the negated, weighted mean.
            let dot_a: f64 = pa.iter().zip(&sign).map(|(p, s)| p * s).sum();
            let dot_b: f64 = pb.iter().zip(&sign).map(|(p, s)| p * s).sum();
            let da: Vec<f64> = pa.iter().zip(&sign).map(|(p, s)| -scale * p * (s - dot_a)).collect();
            let db: Vec<f64> = pb.iter().zip(&sign).map(|(p, s)| scale * p * (s - dot_b)).collect();
            self.backward(&trace, &[da, db], false, &mut grad);
        }
        Ok((total / xs.len() as f64, ParamVector(grad)))
    }
}

fn accumulate_layer(
    slot: LayerSlot,
    params: &[f64],
    input: &[f64],
    d_out: &[f64],
    grad: &mut [f64],
    d_in: Option<&mut Vec<f64>>,
) {
    let w_range = slot.weights();
    let b_range = slot.biases();
    {
        let gw = &mut grad[w_range.clone()];
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut gw[o * slot.fan_in..(o + 1) * slot.fan_in];
            row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
        }
    }
    grad[b_range]
        .iter_mut()
        .zip(d_out)
        .for_each(|(g, d)| *g += d);
    if let Some(d_in) = d_in {
        let w = &params[w_range];
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &w[o * slot.fan_in..(o + 1) * slot.fan_in];
            d_in.iter_mut().zip(row).for_each(|(di, wi)| *di += wi * d);
        }
    }
}

struct Trace {
    /// activations[0] is the input; activations[l + 1] the output of hidden layer l.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    logits: Vec<Vec<f64>>,
}

/// One labeled example borrowed from a dataset.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `params - lr * g`.
pub fn sgd_step(params: &ParamVector, g: &ParamVector, lr: f64) -> Result<ParamVector> {
    if params.len() != g.len() {
        return Err(Error::Shape(format!(
            "parameter length {} != gradient length {}",
            params.len(),
            g.len()
        )));
    }
    let out = ParamVector(
        params
            .0
            .iter()
            .zip(&g.0)
            .map(|(p, gi)| p - lr * gi)
            .collect(),
    );
    if !out.is_finite() {
        return Err(Error::InvalidState(
            "SGD step produced non-finite parameters".into(),
        ));
    }
    Ok(out)
}

/// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ParamVector {
    let mut rng = rng::rng(seed);
    let mut values = vec![0.0; arch.param_count()];
    for slot in arch.slots() {
        let bound = 1.0 / (slot.fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for w in &mut values[slot.weights()] {
            *w = dist.sample(&mut rng);
        }
    }
    ParamVector(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay: f64) -> Result<Self> {
        let s = Self { initial_lr, decay };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(lr: f64) -> Self {
        Self {
            initial_lr: lr,
            decay: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial learning rate must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning-rate decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        Ok(())
    }

    /// Learning rate at 1-based step `t`: `initial_lr * decay^(t-1)`.
    pub fn lr(&self, t: usize) -> f64 {
        let exp = t.saturating_sub(1).min(i32::MAX as usize) as i32;
        self.initial_lr * self.decay.powi(exp)
    }
}
