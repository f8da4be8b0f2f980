//! MLP probe over pooled hidden-state features.
//!
//! Architecture: dense ReLU hidden layers followed by one output unit.
//! With the cross-entropy objective the output goes through a logistic
//! function and is read as P(hallucinated). With the Huber objective the
//! output unit is linear so the probe can regress unbounded targets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    CrossEntropy,
    HuberRegression,
}

/// Dense layer with row-major weights: `weights[o * inputs + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub final_loss: f64,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeModel {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub huber_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_meta: Option<TrainingMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeHyper {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub huber_delta: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            hidden_dims: vec![256],
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 64,
            seed: 0,
            huber_delta: 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy computed from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta { 0.5 * residual * residual } else { delta * (a - 0.5 * delta) }
}

fn huber_grad(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

/// Per-layer parameter gradients with the same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl ProbeModel {
    /// All-zero model; its cross-entropy output is 0.5 everywhere.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize], objective: Objective) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(1);
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            layers,
            objective,
            huber_delta: (objective == Objective::HuberRegression).then_some(1.0),
            training_meta: None,
        }
    }

    /// He-uniform initialisation for ReLU layers, seeded.
    pub fn init(input_dim: usize, hidden_dims: &[usize], objective: Objective, seed: u64) -> Self {
        let mut model = Self::zeros(input_dim, hidden_dims, objective);
        let mut r = rng::stream(seed, 0x1417);
        for layer in &mut model.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = r.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn validate(&self) -> Result<()> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(1);
        if self.layers.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "probe has {} layers, architecture needs {}",
                self.layers.len(),
                dims.len() - 1
            )));
        }
        for (layer, w) in self.layers.iter().zip(dims.windows(2)) {
            if layer.inputs != w[0] || layer.outputs != w[1] {
                return Err(Error::DimensionMismatch { expected: w[0], actual: layer.inputs });
            }
            if layer.weights.len() != w[0] * w[1] || layer.biases.len() != w[1] {
                return Err(Error::InvalidArgument("layer parameter count mismatch".into()));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("probe weights".into()));
            }
        }
        Ok(())
    }

    /// Pre-activations of every layer (the last one is the output logit).
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        let mut buf = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&act, &mut buf);
            pre.push(buf.clone());
            if i < last {
                act = buf.iter().map(|v| v.max(0.0)).collect();
            }
        }
        pre
    }

    /// Raw output unit before any squashing.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, actual: x.len() });
        }
        Ok(self.forward_trace(x).last().expect("at least one layer")[0])
    }

    /// Probe score: logistic output for cross-entropy probes, the linear
    /// output for Huber probes. Higher means more hallucination-suspect.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let z = self.logit(x)?;
        Ok(match self.objective {
            Objective::CrossEntropy => sigmoid(z),
            Objective::HuberRegression => z,
        })
    }

    fn sample_loss(&self, z: f64, target: f64) -> f64 {
        match self.objective {
            Objective::CrossEntropy => bce_from_logit(z, target),
            Objective::HuberRegression => huber(z - target, self.huber_delta.unwrap_or(1.0)),
        }
    }

    /// Mean loss over a dataset.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            total += self.sample_loss(self.logit(x)?, *y);
        }
        Ok(total / xs.len().max(1) as f64)
    }

    /// Analytic gradient of the mean loss over `idx` by backpropagation.
    pub fn gradients(&self, xs: &[Vec<f64>], ys: &[f64], idx: &[usize]) -> Gradients {
        let mut grads: Vec<Layer> =
            self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let scale = 1.0 / idx.len().max(1) as f64;
        let last = self.layers.len() - 1;
        for &i in idx {
            let x = &xs[i];
            let pre = self.forward_trace(x);
            let z = pre[last][0];
            let dz = match self.objective {
                Objective::CrossEntropy => sigmoid(z) - ys[i],
                Objective::HuberRegression => huber_grad(z - ys[i], self.huber_delta.unwrap_or(1.0)),
            };
            let mut delta = vec![dz * scale];
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input: Vec<f64> = if l == 0 {
                    x.clone()
                } else {
                    pre[l - 1].iter().map(|v| v.max(0.0)).collect()
                };
                let g = &mut grads[l];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, v) in row.iter_mut().zip(&input) {
                        *gw += d * v;
                    }
                }
                if l > 0 {
                    let mut next = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (n, w) in next.iter_mut().zip(row) {
                            *n += d * w;
                        }
                    }
                    for (n, p) in next.iter_mut().zip(&pre[l - 1]) {
                        if *p <= 0.0 {
                            *n = 0.0;
                        }
                    }
                    delta = next;
                }
            }
        }
        Gradients { layers: grads }
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * gb;
            }
        }
    }

    /// Flat views over all parameters, in layer order (weights then biases).
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
            .collect()
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }
}

fn check_training_set(xs: &[Vec<f64>], ys: &[f64], objective: Objective) -> Result<usize> {
    if xs.is_empty() {
        return Err(Error::InsufficientItems("empty training set".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), actual: ys.len() });
    }
    let dim = xs[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-length feature vectors".into()));
    }
    for x in xs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("training target".into()));
    }
    if objective == Objective::CrossEntropy {
        if ys.iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(Error::InvalidArgument("cross-entropy targets must be 0 or 1".into()));
        }
        let positives = ys.iter().filter(|y| **y == 1.0).count();
        if positives == 0 || positives == ys.len() {
            return Err(Error::DegenerateLabels(format!(
                "{positives} positives out of {}",
                ys.len()
            )));
        }
    }
    Ok(dim)
}

/// Mini-batch gradient descent with a fixed learning rate. Batches are
/// reshuffled every epoch from a seeded stream, so training is a pure
/// function of `(data, hyper)`.
///
/// `stop` is polled after every epoch and ends training early when it
/// returns true.
pub fn train_probe_with(
    xs: &[Vec<f64>],
    ys: &[f64],
    objective: Objective,
    hyper: &ProbeHyper,
    mut stop: impl FnMut(usize, &ProbeModel) -> bool,
) -> Result<ProbeModel> {
    let dim = check_training_set(xs, ys, objective)?;
    if hyper.batch_size == 0 || hyper.epochs == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
    }
    if !(hyper.learning_rate > 0.0 && hyper.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning_rate must be positive".into()));
    }
    let mut model = ProbeModel::init(dim, &hyper.hidden_dims, objective, hyper.seed);
    if objective == Objective::HuberRegression {
        model.huber_delta = Some(hyper.huber_delta);
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle = rng::stream(hyper.seed, 0x5ffe);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut epochs_run = 0;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(hyper.batch_size) {
            let g = model.gradients(xs, ys, batch);
            model.apply(&g, hyper.learning_rate);
        }
        history.push(model.loss(xs, ys)?);
        epochs_run = epoch;
        if stop(epoch, &model) {
            break;
        }
    }
    model.validate()?;
    model.training_meta = Some(TrainingMeta {
        epochs: epochs_run,
        learning_rate: hyper.learning_rate,
        batch_size: hyper.batch_size,
        seed: hyper.seed,
        final_loss: *history.last().expect("at least one epoch"),
        loss_history: history,
    });
    Ok(model)
}

pub fn train_probe(
    xs: &[Vec<f64>],
    ys: &[f64],
    objective: Objective,
    hyper: &ProbeHyper,
) -> Result<ProbeModel> {
    train_probe_with(xs, ys, objective, hyper, |_, _| false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn separable(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = rng::stream(seed, 1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as f64;
            let mut x: Vec<f64> = (0..dim).map(|_| normal.sample(&mut r)).collect();
            x[0] = if y == 1.0 { 1.0 + x[0].abs() } else { -1.0 - x[0].abs() };
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = ProbeModel::zeros(4, &[8], Objective::CrossEntropy);
        assert_eq!(m.score(&[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.5);
        assert!(matches!(m.score(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn outputs_stay_in_open_unit_interval() {
        let m = ProbeModel::init(6, &[16], Objective::CrossEntropy, 3);
        let mut r = rng::stream(9, 9);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| r.random_range(-5.0..5.0)).collect();
            let s = m.score(&x).unwrap();
            assert!(s > 0.0 && s < 1.0, "{s}");
        }
    }

    #[test]
    fn degenerate_labels_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        let r = train_probe(&xs, &[0.0, 0.0], Objective::CrossEntropy, &ProbeHyper::default());
        assert!(matches!(r, Err(Error::DegenerateLabels(_))));
        let r = train_probe(&xs, &[0.0], Objective::CrossEntropy, &ProbeHyper::default());
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = separable(100, 4, 1);
        let hyper = ProbeHyper { hidden_dims: vec![8], epochs: 5, seed: 11, ..Default::default() };
        let a = train_probe(&xs, &ys, Objective::CrossEntropy, &hyper).unwrap();
        let b = train_probe(&xs, &ys, Objective::CrossEntropy, &hyper).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separable_centroids_ordered() {
        let (xs, ys) = separable(200, 2, 2);
        let hyper = ProbeHyper { hidden_dims: vec![16], epochs: 50, ..Default::default() };
        let m = train_probe(&xs, &ys, Objective::CrossEntropy, &hyper).unwrap();
        let centroid = |label: f64| {
            let pts: Vec<&Vec<f64>> = xs.iter().zip(&ys).filter(|(_, y)| **y == label).map(|(x, _)| x).collect();
            (0..2).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64).collect::<Vec<_>>()
        };
        assert!(m.score(&centroid(1.0)).unwrap() > m.score(&centroid(0.0)).unwrap());
    }

    #[test]
    fn full_batch_loss_nonincreasing() {
        let (xs, ys) = separable(200, 3, 4);
        let hyper = ProbeHyper {
            hidden_dims: vec![8],
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 200,
            ..Default::default()
        };
        let m = train_probe(&xs, &ys, Objective::CrossEntropy, &hyper).unwrap();
        let h = &m.training_meta.unwrap().loss_history;
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn huber_probe_regresses_real_targets() {
        let mut r = rng::stream(5, 5);
        let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![r.random_range(-1.0..1.0)]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] + 1.5).collect();
        let hyper = ProbeHyper { hidden_dims: vec![16], epochs: 300, learning_rate: 0.05, batch_size: 20, ..Default::default() };
        let m = train_probe(&xs, &ys, Objective::HuberRegression, &hyper).unwrap();
        assert!(m.training_meta.as_ref().unwrap().final_loss < 0.01);
        assert!((m.score(&[0.5]).unwrap() - 2.5).abs() < 0.2);
    }
}
