//! One-hidden-layer ReLU regressor trained by plain SGD, the comparison model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 100,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("baseline.hidden", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("baseline.lr", "must be positive"));
        }
        Ok(())
    }
}

/// `y = w2 · relu(w1 · x + b1) + b2`, weights stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient of the squared error, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradient {
    fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|v| v.iter().all(|g| g.is_finite()))
    }
}

impl MlpModel {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        MlpModel {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(input, hidden, output);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for v in m.w1.iter_mut().chain(m.b1.iter_mut()) {
            *v = rng.random_range(-a1..a1);
        }
        for v in m.w2.iter_mut().chain(m.b2.iter_mut()) {
            *v = rng.random_range(-a2..a2);
        }
        m
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input..(h + 1) * self.input];
                self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn output_from(&self, act: &[f64]) -> Vec<f64> {
        (0..self.output)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(act).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let act: Vec<f64> = self.hidden_pre(x).into_iter().map(|v| v.max(0.0)).collect();
        self.output_from(&act)
    }

    /// `‖forward(x) − target‖²`.
    pub fn loss(&self, x: &[f64], target: &[f64]) -> f64 {
        self.forward(x)
            .iter()
            .zip(target)
            .map(|(y, t)| (y - t).powi(2))
            .sum()
    }

    /// Loss and its analytic gradient.
    pub fn gradient(&self, x: &[f64], target: &[f64]) -> (f64, Gradient) {
        let pre = self.hidden_pre(x);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let y = self.output_from(&act);
        let dy: Vec<f64> = y.iter().zip(target).map(|(y, t)| 2.0 * (y - t)).collect();
        let loss = y.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum();
        let mut g = Gradient {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.w2.len()],
            b2: dy.clone(),
        };
        for o in 0..self.output {
            for h in 0..self.hidden {
                g.w2[o * self.hidden + h] = dy[o] * act[h];
            }
        }
        for h in 0..self.hidden {
            if pre[h] <= 0.0 {
                continue;
            }
            let back: f64 = (0..self.output)
                .map(|o| dy[o] * self.w2[o * self.hidden + h])
                .sum();
            g.b1[h] = back;
            for i in 0..self.input {
                g.w1[h * self.input + i] = back * x[i];
            }
        }
        (loss, g)
    }

    /// One SGD step; returns the pre-step loss. A non-finite gradient skips
    /// the step and returns `None`.
    pub fn sgd_step(&mut self, x: &[f64], target: &[f64], lr: f64) -> Option<f64> {
        let (loss, g) = self.gradient(x, target);
        if !(loss.is_finite() && g.is_finite()) {
            log::warn!("non-finite gradient, SGD step skipped");
            return None;
        }
        let apply = |p: &mut [f64], g: &[f64]| {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        };
        apply(&mut self.w1, &g.w1);
        apply(&mut self.b1, &g.b1);
        apply(&mut self.w2, &g.w2);
        apply(&mut self.b2, &g.b2);
        Some(loss)
    }

    /// All parameters in the order w1, b1, w2, b2.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for v in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *v = it.next().expect("parameter vector too short");
        }
    }
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

/// Largest relative error, over all parameters, between analytic and central-difference gradients.
pub fn gradient_check(m: &MlpModel, x: &[f64], t: &[f64]) -> f64 {
    let (_, g) = m.gradient(x, t);
    let analytic = g.flatten();
    let p = m.parameters();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = m.clone();
    for k in 0..p.len() {
        let mut q = p.clone();
        q[k] = p[k] + h;
        probe.set_parameters(&q);
        let up = probe.loss(x, t);
        q[k] = p[k] - h;
        probe.set_parameters(&q);
        let down = probe.loss(x, t);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}
