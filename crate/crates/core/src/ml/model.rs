use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::LabeledDataset;
use crate::error::{Error, Result};

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// MLP with ReLU hidden activations and a softmax output.
///
/// Parameters are grouped per layer as `[W_1, b_1, W_2, b_2, ...]`; each
/// group is one unit for layer-wise projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.01,
            momentum: 0.5,
            batch_size: 64,
        }
    }
}

impl Model {
    /// Glorot-uniform weights; biases uniform in `±1/sqrt(fan_in)`.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let a = (6.0 / (inputs + outputs) as f64).sqrt();
                let b = 1.0 / (inputs as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-a..a)).collect(),
                    bias: (0..outputs).map(|_| rng.random_range(-b..b)).collect(),
                }
            })
            .collect();
        Model { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Sizes of the parameter groups, in flatten order.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    pub fn group_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.group_sizes()
            .into_iter()
            .map(|n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Model> {
        let mut m = self.clone();
        m.unflatten(params)?;
        Ok(m)
    }

    /// Layer activations; the last entry holds softmax probabilities.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (k, l) in self.layers.iter().enumerate() {
            let input = &acts[k];
            let mut z: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + l.bias[o]
                })
                .collect();
            if k + 1 < self.layers.len() {
                z.iter_mut().filter(|v| **v < 0.0).for_each(|v| *v = 0.0);
            } else {
                softmax_in_place(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().unwrap_or_default()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Mean softmax cross-entropy over `indices` of `data`.
    pub fn loss_on(&self, data: &LabeledDataset, indices: &[usize]) -> f64 {
        let total: f64 = indices
            .iter()
            .map(|&i| {
                let p = self.predict_proba(data.row(i));
                nll(p[data.labels[i]])
            })
            .sum();
        total / indices.len().max(1) as f64
    }

    pub fn loss(&self, data: &LabeledDataset) -> f64 {
        let all: Vec<usize> = (0..data.len()).collect();
        self.loss_on(data, &all)
    }

    /// Mean loss and its gradient (flatten order) over a batch.
    pub fn gradient(&self, data: &LabeledDataset, batch: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let offsets = self.layer_offsets();
        let mut loss = 0.0;
        for &i in batch {
            let acts = self.activations(data.row(i));
            let label = data.labels[i];
            let probs = acts.last().expect("output layer");
            loss += nll(probs[label]);
            // dL/dz at the output
            let mut delta: Vec<f64> = probs.clone();
            delta[label] -= 1.0;
            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let input = &acts[k];
                let (w_off, b_off) = offsets[k];
                for o in 0..l.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grad[w_off + o * l.inputs..w_off + (o + 1) * l.inputs];
                    row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
                    grad[b_off + o] += d;
                }
                if k > 0 {
                    let mut prev = vec![0.0; l.inputs];
                    for (&d, row) in delta.iter().zip(l.weights.chunks(l.inputs)) {
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                    }
                    // ReLU derivative
                    prev.iter_mut()
                        .zip(input)
                        .for_each(|(p, &a)| if a <= 0.0 { *p = 0.0 });
                    delta = prev;
                }
            }
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off;
                let b = off + l.weights.len();
                off = b + l.bias.len();
                (w, b)
            })
            .collect()
    }
}

/// Negative log-likelihood, propagating NaN.
fn nll(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD with momentum on softmax cross-entropy.
pub fn train_local<R: Rng + ?Sized>(
    model: &Model,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Model> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.n_features != model.input_dim() {
        return Err(Error::LengthMismatch {
            expected: model.input_dim(),
            actual: data.n_features,
        });
    }
    let mut params = model.flatten();
    let mut velocity = vec![0.0; params.len()];
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let (loss, grad) = current.gradient(data, chunk);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} in epoch {epoch}")));
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.lr * *v;
            }
            current.unflatten(&params)?;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ml::data::generate_synthetic;
    use crate::rng::stream;

    fn toy() -> (Model, LabeledDataset) {
        let mut rng = stream(1, "t", &[]);
        let model = Model::mlp(&[4, 6, 3], &mut rng);
        let (train, _) = generate_synthetic(50, 3, 4, 2.0, 1);
        (model, train)
    }

    #[test]
    fn shapes_and_flatten_round_trip() {
        let (model, _) = toy();
        assert_eq!(model.group_sizes(), vec![24, 6, 18, 3]);
        assert_eq!(model.param_count(), 51);
        let flat = model.flatten();
        let back = model.with_params(&flat).unwrap();
        assert_eq!(back, model);
        let perturbed: Vec<f64> = flat.iter().enumerate().map(|(i, v)| v + i as f64).collect();
        assert_eq!(model.with_params(&perturbed).unwrap().flatten(), perturbed);
        assert!(model.with_params(&flat[1..]).is_err());
        for l in model.layers.windows(2) {
            assert_eq!(l[0].outputs, l[1].inputs);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let (model, data) = toy();
        for i in 0..data.len() {
            let p = model.predict_proba(data.row(i));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut big = vec![1000.0, 999.0, -1000.0];
        softmax_in_place(&mut big);
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn finite_difference(model: &Model, data: &LabeledDataset, batch: &[usize], k: usize) -> f64 {
        let h = 1e-5;
        let mut p = model.flatten();
        let orig = p[k];
        p[k] = orig + h;
        let up = model.with_params(&p).unwrap().loss_on(data, batch);
        p[k] = orig - h;
        let down = model.with_params(&p).unwrap().loss_on(data, batch);
        (up - down) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, data) = toy();
        let (_, grad) = model.gradient(&data, &[0, 1, 2]);
        for (k, &g) in grad.iter().enumerate() {
            let fd = finite_difference(&model, &data, &[0, 1, 2], k);
            let denom = fd.abs().max(g.abs()).max(1e-8);
            assert!((fd - g).abs() / denom < 1e-4 || (fd - g).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (model, data) = toy();
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        let out = train_local(&model, &data, &cfg, &mut stream(2, "t", &[])).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn single_step_is_lr_times_gradient() {
        let (model, data) = toy();
        let one = data.subset(&[5]);
        let cfg = TrainConfig { epochs: 1, lr: 0.1, momentum: 0.5, batch_size: 1 };
        let out = train_local(&model, &one, &cfg, &mut stream(3, "t", &[])).unwrap();
        let before = model.flatten();
        let after = out.flatten();
        for k in 0..before.len() {
            let fd = finite_difference(&model, &one, &[0], k);
            let step = (before[k] - after[k]) / 0.1;
            assert!((step - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "k={k}: {step} vs {fd}");
        }
    }

    #[test]
    fn training_reduces_loss_on_separable_blobs() {
        let (train, _) = generate_synthetic(200, 2, 2, 4.0, 9);
        let model = Model::mlp(&[2, 8, 2], &mut stream(9, "init", &[]));
        let before = model.loss(&train);
        let out = train_local(&model, &train, &TrainConfig::default(), &mut stream(9, "t", &[])).unwrap();
        assert!(out.loss(&train) < before);
    }

    #[test]
    fn training_errors() {
        let (model, data) = toy();
        let empty = data.subset(&[]);
        assert!(matches!(
            train_local(&model, &empty, &TrainConfig::default(), &mut stream(4, "t", &[])),
            Err(Error::EmptyDataset)
        ));
        let cfg = TrainConfig { lr: 1e308, momentum: 0.0, epochs: 3, batch_size: 4 };
        assert!(matches!(
            train_local(&model, &data, &cfg, &mut stream(4, "t", &[])),
            Err(Error::Diverged(_))
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let (model, data) = toy();
        let a = train_local(&model, &data, &TrainConfig::default(), &mut stream(5, "t", &[])).unwrap();
        let b = train_local(&model, &data, &TrainConfig::default(), &mut stream(5, "t", &[])).unwrap();
        assert_eq!(a, b);
    }
}
