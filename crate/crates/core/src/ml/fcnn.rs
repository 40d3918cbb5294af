//! Fully connected rectifier network trained with Adam.
//!
//! The binary head is a single logistic unit trained on the mean negated
//! binary cross entropy. A softmax head with categorical cross entropy is
//! available for multiclass problems but is not the default.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{class_index, stratified_split, MlError};
use crate::sampler::{derive_seed, SeedPart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// One sigmoid unit; two classes only.
    Logistic,
    /// One unit per class with normalized exponentials.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcnnSpec {
    pub hidden: Vec<usize>,
    pub output: OutputHead,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Fraction of the training rows held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FcnnSpec {
    fn default() -> Self {
        FcnnSpec {
            hidden: vec![256, 128, 32],
            output: OutputHead::Logistic,
            learning_rate: 1e-3,
            dropout: 0.2,
            patience: 10,
            max_epochs: 200,
            batch_size: 64,
            validation_fraction: 0.15,
            seed: 0,
        }
    }
}

impl FcnnSpec {
    fn validate(&self) -> Result<(), MlError> {
        if self.hidden.contains(&0) {
            return Err(MlError::InvalidSpec("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MlError::InvalidSpec("dropout must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(MlError::InvalidSpec("batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlError::InvalidSpec("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Network parameters, without any training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub output: OutputHead,
}

/// Parameter gradients, shaped like [`Network::layers`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negated binary cross entropy of probabilities `p` against targets.
pub fn binary_cross_entropy(p: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let a = if y > 0.0 { y * p.ln() } else { 0.0 };
            let b = if y < 1.0 { (1.0 - y) * (1.0 - p).ln() } else { 0.0 };
            -(a + b)
        })
        .sum();
    total / p.len() as f64
}

impl Network {
    /// Uniform `+-1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize, head: OutputHead, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &width in hidden.iter().chain(std::iter::once(&outputs)) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            layers.push(Dense {
                w: Array2::from_shape_simple_fn((fan_in, width), || dist.sample(rng)),
                b: Array1::from_shape_simple_fn(width, || dist.sample(rng)),
            });
            fan_in = width;
        }
        Network { layers, output: head }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Output-layer pre-activations.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.w) + &layer.b;
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a
    }

    /// Class probabilities: one column (positive class) for the logistic
    /// head, one per class for softmax.
    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = self.logits(x);
        match self.output {
            OutputHead::Logistic => z.mapv_inplace(sigmoid),
            OutputHead::Softmax => {
                for mut row in z.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
            }
        }
        z
    }

    /// Mean loss from logits, computed without forming probabilities.
    fn loss_from_logits(&self, z: &Array2<f64>, y: &[usize]) -> f64 {
        let total: f64 = match self.output {
            OutputHead::Logistic => z
                .column(0)
                .iter()
                .zip(y)
                .map(|(&z, &k)| softplus(z) - z * k as f64)
                .sum(),
            OutputHead::Softmax => z
                .rows()
                .into_iter()
                .zip(y)
                .map(|(row, &k)| {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    lse - row[k]
                })
                .sum(),
        };
        total / y.len() as f64
    }

    /// Mean loss on `(x, y)` with `y` holding class indices.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
        self.loss_from_logits(&self.logits(x), y)
    }

    /// Loss and gradients by backpropagation. `dropout` is the drop rate
    /// applied after every hidden rectifier; pass 0 for a deterministic pass.
    pub fn backprop(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        dropout: f64,
        rng: &mut impl Rng,
    ) -> (f64, Gradients) {
        let last = self.layers.len() - 1;
        let keep = 1.0 - dropout;
        // activations[i] is the input of layer i; masks scale rectifier outputs
        let mut activations = vec![x.to_owned()];
        let mut masks: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = activations[i].dot(&layer.w) + &layer.b;
            if i == last {
                activations.push(z);
                break;
            }
            let mut mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if dropout > 0.0 {
                mask.mapv_inplace(|m| if rng.gen::<f64>() < keep { m / keep } else { 0.0 });
            }
            activations.push(&z * &mask);
            masks.push(mask);
        }

        let z = activations.pop().unwrap();
        let loss = self.loss_from_logits(&z, y);
        let batch = y.len() as f64;
        let mut delta = match self.output {
            OutputHead::Logistic => {
                let mut d = z.mapv(sigmoid);
                for (v, &k) in d.column_mut(0).iter_mut().zip(y) {
                    *v -= k as f64;
                }
                d
            }
            OutputHead::Softmax => {
                let mut d = self.probabilities_from_logits(z);
                for (mut row, &k) in d.rows_mut().into_iter().zip(y) {
                    row[k] -= 1.0;
                }
                d
            }
        };
        delta /= batch;

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a = &activations[i];
            grads.push(Dense {
                w: a.t().dot(&delta),
                b: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                delta = delta.dot(&self.layers[i].w.t()) * &masks[i - 1];
            }
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    fn probabilities_from_logits(&self, mut z: Array2<f64>) -> Array2<f64> {
        for mut row in z.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        z
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parameter_count());
        let mut it = values.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network, lr: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let lr = self.lr;
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            };
            Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(update);
            Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(update);
        }
    }
}

/// Per-feature affine standardization fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap();
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fcnn {
    pub spec: FcnnSpec,
    pub classes: Vec<u8>,
    pub standardizer: Standardizer,
    pub network: Network,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub validation_loss: Vec<f64>,
}

impl Fcnn {
    pub fn n_features(&self) -> usize {
        self.network.inputs()
    }

    /// Logistic head: probability >= 0.5 maps to the higher class id.
    /// Softmax head: arg-max, lowest class id on ties.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u8>, MlError> {
        if x.ncols() != self.n_features() {
            return Err(MlError::SchemaMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let p = self.network.probabilities(self.standardizer.apply(x).view());
        Ok(match self.network.output {
            OutputHead::Logistic => p
                .column(0)
                .iter()
                .map(|&q| self.classes[(q >= 0.5) as usize])
                .collect(),
            OutputHead::Softmax => p
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    self.classes[best]
                })
                .collect(),
        })
    }
}

fn gather(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Trains on a stratified `1 - validation_fraction` share of the rows and
/// keeps the parameters of the epoch with the lowest validation loss.
pub fn train_fcnn(x: ArrayView2<'_, f64>, labels: &[u8], spec: &FcnnSpec) -> Result<Fcnn, MlError> {
    spec.validate()?;
    let (classes, y) = class_index(labels, x.nrows())?;
    if classes.len() < 2 {
        return Err(MlError::SingleClass(classes[0]));
    }
    if spec.output == OutputHead::Logistic && classes.len() != 2 {
        return Err(MlError::InvalidSpec(format!(
            "logistic output needs exactly two classes, got {}",
            classes.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MlError::NonFinite);
    }

    let (train_rows, val_rows) = stratified_split(
        labels,
        1.0 - spec.validation_fraction,
        derive_seed(spec.seed, &[SeedPart::Tag("validation")]),
    );
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(MlError::InvalidSpec("validation split leaves an empty side".into()));
    }

    let standardizer = Standardizer::fit(gather(x, &train_rows).view());
    let xs = standardizer.apply(x);
    let x_train = gather(xs.view(), &train_rows);
    let y_train: Vec<usize> = train_rows.iter().map(|&r| y[r]).collect();
    let x_val = gather(xs.view(), &val_rows);
    let y_val: Vec<usize> = val_rows.iter().map(|&r| y[r]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[SeedPart::Tag("init")]));
    let outputs = match spec.output {
        OutputHead::Logistic => 1,
        OutputHead::Softmax => classes.len(),
    };
    let mut net = Network::new(x.ncols(), &spec.hidden, outputs, spec.output, &mut rng);
    let mut adam = Adam::new(&net, spec.learning_rate);

    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();
    for epoch in 1..=spec.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let xb = gather(x_train.view(), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&r| y_train[r]).collect();
            let (loss, grads) = net.backprop(xb.view(), &yb, spec.dropout, &mut rng);
            if !loss.is_finite() {
                return Err(MlError::Diverged { epoch });
            }
            adam.step(&mut net, &grads);
        }
        let val_loss = net.loss(x_val.view(), &y_val);
        if !val_loss.is_finite() {
            return Err(MlError::Diverged { epoch });
        }
        history.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, net.clone(), epoch);
        } else if epoch - best.2 >= spec.patience {
            break;
        }
    }
    log::debug!("fcnn stopped after {} epochs, best {}", history.len(), best.2);

    Ok(Fcnn {
        spec: spec.clone(),
        classes,
        standardizer,
        network: best.1,
        best_epoch: best.2,
        validation_loss: history,
    })
}

/// Rows `start..end` of `x`; exposed for batching in callers.
pub fn row_block(x: ArrayView2<'_, f64>, start: usize, end: usize) -> ArrayView2<'_, f64> {
    x.slice_move(s![start..end, ..])
}
