//! One-hidden-layer ReLU network with a sigmoid output, trained by full-batch
//! gradient descent on binary cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NnParams {
    fn default() -> Self {
        NnParams { hidden: 16, epochs: 2000, learning_rate: 0.1, seed: 0 }
    }
}

/// Per-feature affine standardization fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let f = rows.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; f];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        // constant columns are left unscaled
        let std = var.into_iter().map(|v| (v / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Layer sizes `[inputs, hidden, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden x inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub activations: [String; 2],
}

/// Same layout as [`Network`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
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

/// `-[y ln s(z) + (1-y) ln(1-s(z))]` without forming `s(z)`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

impl Network {
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (inputs.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let w1 = (0..hidden * inputs).map(|_| rng.gen_range(-a1..a1)).collect();
        let b1 = (0..hidden).map(|_| rng.gen_range(-a1..a1)).collect();
        let w2 = (0..hidden).map(|_| rng.gen_range(-a2..a2)).collect();
        let b2 = rng.gen_range(-a2..a2);
        Network { inputs, hidden, w1, b1, w2, b2, activations: ["relu".into(), "sigmoid".into()] }
    }

    pub fn n_params(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let (h, f) = (self.hidden, self.inputs);
        self.w1.copy_from_slice(&p[..h * f]);
        self.b1.copy_from_slice(&p[h * f..h * f + h]);
        self.w2.copy_from_slice(&p[h * f + h..h * f + 2 * h]);
        self.b2 = p[h * f + 2 * h];
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Output logit for one (already standardized) input.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let z1 = self.hidden_pre(x);
        self.b2 + z1.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean cross-entropy loss over the batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        xs.iter().zip(ys).map(|(x, &y)| bce_with_logit(self.logit(x), y)).sum::<f64>() / n
    }

    /// Mean loss and its analytic gradient by backpropagation.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[f64]) -> (f64, Gradient) {
        let (h, f) = (self.hidden, self.inputs);
        let n = xs.len() as f64;
        let mut g = Gradient { w1: vec![0.0; h * f], b1: vec![0.0; h], w2: vec![0.0; h], b2: 0.0 };
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z1 = self.hidden_pre(x);
            let a1: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();
            let z2 = self.b2 + a1.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>();
            loss += bce_with_logit(z2, y);
            let dz2 = (sigmoid(z2) - y) / n;
            g.b2 += dz2;
            for j in 0..h {
                g.w2[j] += dz2 * a1[j];
                if z1[j] > 0.0 {
                    let dz1 = dz2 * self.w2[j];
                    g.b1[j] += dz1;
                    let row = &mut g.w1[j * f..(j + 1) * f];
                    for (gw, xv) in row.iter_mut().zip(x) {
                        *gw += dz1 * xv;
                    }
                }
            }
        }
        (loss / n, g)
    }

    fn step(&mut self, g: &Gradient, lr: f64) {
        for (w, d) in self.w1.iter_mut().zip(&g.w1) {
            *w -= lr * d;
        }
        for (w, d) in self.b1.iter_mut().zip(&g.b1) {
            *w -= lr * d;
        }
        for (w, d) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * d;
        }
        self.b2 -= lr * g.b2;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub params: NnParams,
    pub scaler: Standardizer,
    pub network: Network,
    pub final_loss: f64,
}

impl NeuralNet {
    pub fn probability(&self, x: &[u32]) -> f64 {
        let raw: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.network.probability(&self.scaler.apply(&raw))
    }

    /// Malicious when the output probability exceeds 0.5.
    pub fn predict_one(&self, x: &[u32]) -> bool {
        self.probability(x) > 0.5
    }

    pub fn predict(&self, rows: &[Vec<u32>]) -> Vec<bool> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }
}

/// Train on standardized inputs. Returns the model with its final loss.
pub fn train_network(xs: &[Vec<f64>], ys: &[f64], params: NnParams) -> Result<(Network, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = Network::init(xs[0].len(), params.hidden, params.seed);
    for epoch in 0..params.epochs {
        let (loss, g) = net.loss_and_grad(xs, ys);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        net.step(&g, params.learning_rate);
    }
    let final_loss = net.loss(xs, ys);
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: params.epochs });
    }
    Ok((net, final_loss))
}

pub fn train_nn(rows: &[Vec<u32>], labels: &[bool], params: NnParams) -> Result<NeuralNet> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let scaler = Standardizer::fit(&raw);
    let xs: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let (network, final_loss) = train_network(&xs, &ys, params)?;
    Ok(NeuralNet { params, scaler, network, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> (Vec<Vec<u32>>, Vec<bool>) {
        (vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]], vec![false, true, true, false])
    }

    #[test]
    fn learns_xor() {
        let (rows, labels) = xor();
        let p = NnParams { hidden: 4, epochs: 5000, learning_rate: 0.5, seed: 1 };
        let m = train_nn(&rows, &labels, p).unwrap();
        assert_eq!(m.predict(&rows), labels);
        assert!(m.final_loss < 0.1, "{}", m.final_loss);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let (rows, labels) = xor();
        let p = NnParams { hidden: 4, epochs: 50, learning_rate: 0.0, seed: 5 };
        let m = train_nn(&rows, &labels, p).unwrap();
        assert_eq!(m.network, Network::init(2, 4, 5));
    }

    #[test]
    fn divergence_is_reported() {
        let (rows, labels) = xor();
        let p = NnParams { hidden: 4, epochs: 50, learning_rate: f64::INFINITY, seed: 5 };
        assert!(matches!(train_nn(&rows, &labels, p), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn stable_loss_for_large_logits() {
        assert!((bce_with_logit(800.0, 1.0)).abs() < 1e-12);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut n = Network::init(3, 5, 2);
        let p = n.params_flat();
        assert_eq!(p.len(), n.n_params());
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        n.set_params_flat(&doubled);
        assert_eq!(n.params_flat(), doubled);
    }
}
