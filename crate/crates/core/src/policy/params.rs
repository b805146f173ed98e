use crate::error::{Error, Result};
use crate::rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{context_dim, FeatureVector, CONTENT_DIM};

/// Learnable weights. `trace_head` is row-major `(vocab + 1) x context_dim(vocab)`;
/// the last row scores STOP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    pub vocab_size: usize,
    pub context_dim: usize,
    pub trace_head: Vec<f64>,
    pub answer_content_weights: Vec<f64>,
    pub answer_position_weights: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(vocab_size: usize, k: usize) -> PolicyParams {
        PolicyParams {
            vocab_size,
            context_dim: context_dim(vocab_size),
            trace_head: vec![0.0; (vocab_size + 1) * context_dim(vocab_size)],
            answer_content_weights: vec![0.0; CONTENT_DIM],
            answer_position_weights: vec![0.0; k],
            version: 0,
        }
    }

    /// Every weight drawn i.i.d. from N(0, scale^2).
    pub fn random(vocab_size: usize, k: usize, scale: f64, seed: u64) -> Result<PolicyParams> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Config(format!("init scale {scale}: {e}")))?;
        let mut r = rng::stream(seed, "init", &[]);
        let mut p = PolicyParams::zeros(vocab_size, k);
        for w in p.weights_mut() {
            *w = normal.sample(&mut r);
        }
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.answer_position_weights.len()
    }

    pub fn stop_index(&self) -> usize {
        self.vocab_size
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.trace_head[r * self.context_dim..(r + 1) * self.context_dim]
    }

    pub fn trace_logits(&self, x: &[f64]) -> Vec<f64> {
        // Contexts are mostly zeros; skipping them leaves every sum unchanged.
        let nz: Vec<(usize, f64)> = x.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        self.trace_head
            .chunks_exact(self.context_dim)
            .map(|row| nz.iter().map(|&(i, v)| row[i] * v).sum())
            .collect()
    }

    pub fn answer_logits(&self, slot_content: &[[f64; CONTENT_DIM]]) -> Vec<f64> {
        slot_content
            .iter()
            .enumerate()
            .map(|(slot, c)| dot(&self.answer_content_weights, c) + self.answer_position_weights[slot])
            .collect()
    }

    /// Score of one decision point against a flattened feature vector, used
    /// to cross-check `featurize` against the heads.
    pub fn answer_logits_from(&self, fv: &FeatureVector) -> Vec<f64> {
        (0..fv.n_options)
            .map(|s| {
                dot(&self.answer_content_weights, fv.slot_content(s))
                    + dot(&self.answer_position_weights, fv.slot_position(s))
            })
            .collect()
    }

    pub fn n_weights(&self) -> usize {
        self.trace_head.len() + self.answer_content_weights.len() + self.answer_position_weights.len()
    }

    pub fn weights(&self) -> impl Iterator<Item = &f64> {
        self.trace_head
            .iter()
            .chain(&self.answer_content_weights)
            .chain(&self.answer_position_weights)
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.trace_head
            .iter_mut()
            .chain(&mut self.answer_content_weights)
            .chain(&mut self.answer_position_weights)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weights().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_weights() {
            return Err(Error::Config(format!("expected {} weights, got {}", self.n_weights(), values.len())));
        }
        for (w, v) in self.weights_mut().zip(values) {
            *w = *v;
        }
        Ok(())
    }

    /// `self += step * grad`, bumping the version.
    pub fn apply(&mut self, grad: &Gradient, step: f64) -> Result<()> {
        self.check_shape(grad)?;
        for (w, g) in self.weights_mut().zip(grad.values()) {
            *w += step * g;
        }
        self.version += 1;
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.weights().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("policy parameters (version {})", self.version)))
        }
    }

    pub fn check_shape(&self, grad: &Gradient) -> Result<()> {
        if grad.trace_head.len() == self.trace_head.len()
            && grad.answer_content.len() == self.answer_content_weights.len()
            && grad.answer_position.len() == self.answer_position_weights.len()
        {
            Ok(())
        } else {
            Err(Error::Config("gradient shape does not match parameters".into()))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_dim != context_dim(self.vocab_size)
            || self.trace_head.len() != (self.vocab_size + 1) * self.context_dim
            || self.answer_content_weights.len() != CONTENT_DIM
            || self.answer_position_weights.len() < 2
        {
            return Err(Error::Config(format!(
                "parameter shapes inconsistent: vocab {} context {} trace_head {} content {} position {}",
                self.vocab_size,
                self.context_dim,
                self.trace_head.len(),
                self.answer_content_weights.len(),
                self.answer_position_weights.len()
            )));
        }
        self.check_finite()
    }
}

/// Same shape as [`PolicyParams`], without metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub context_dim: usize,
    pub trace_head: Vec<f64>,
    pub answer_content: Vec<f64>,
    pub answer_position: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &PolicyParams) -> Gradient {
        Gradient {
            context_dim: p.context_dim,
            trace_head: vec![0.0; p.trace_head.len()],
            answer_content: vec![0.0; p.answer_content_weights.len()],
            answer_position: vec![0.0; p.answer_position_weights.len()],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.trace_head.iter().chain(&self.answer_content).chain(&self.answer_position)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.trace_head
            .iter_mut()
            .chain(&mut self.answer_content)
            .chain(&mut self.answer_position)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Gradient, s: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.values_mut() {
            *a *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Accumulate `coef * x` into trace-head row `r`.
    pub(crate) fn add_row(&mut self, r: usize, coef: f64, x: &[f64]) {
        if coef == 0.0 {
            return;
        }
        let row = &mut self.trace_head[r * self.context_dim..(r + 1) * self.context_dim];
        for (g, xi) in row.iter_mut().zip(x) {
            if *xi != 0.0 {
                *g += coef * xi;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}
