//! Criss-cross attention forward pass.
//!
//! Each position attends over its own row and column (itself counted once),
//! and the attended values are added to the input as a residual. Two passes
//! with shared weights let every position see every other one.

use crate::error::{Error, Result};

use super::Tensor3;

/// Query/key projections are `key_channels x channels`, the value
/// projection `channels x channels`. All row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    channels: usize,
    key_channels: usize,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
}

impl AttentionWeights {
    pub fn new(channels: usize, key_channels: usize, wq: Vec<f64>, wk: Vec<f64>, wv: Vec<f64>) -> Result<Self> {
        let qk = key_channels * channels;
        if wq.len() != qk || wk.len() != qk || wv.len() != channels * channels {
            return Err(Error::DimensionMismatch(format!(
                "expected wq/wk of {qk} and wv of {} entries, got {}/{}/{}",
                channels * channels,
                wq.len(),
                wk.len(),
                wv.len()
            )));
        }
        if wq.iter().chain(&wk).chain(&wv).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("attention weights must be finite".into()));
        }
        Ok(Self { channels, key_channels, wq, wk, wv })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn key_channels(&self) -> usize {
        self.key_channels
    }
}

fn project(features: &Tensor3, matrix: &[f64], out_channels: usize) -> Tensor3 {
    let [c_in, h, w] = features.shape();
    Tensor3::from_fn(out_channels, h, w, |o, y, x| {
        let row = &matrix[o * c_in..(o + 1) * c_in];
        row.iter().enumerate().map(|(c, m)| m * features.get(c, y, x)).sum()
    })
}

fn single_pass(features: &Tensor3, weights: &AttentionWeights) -> Tensor3 {
    let [channels, h, w] = features.shape();
    let q = project(features, &weights.wq, weights.key_channels);
    let k = project(features, &weights.wk, weights.key_channels);
    let v = project(features, &weights.wv, channels);
    let mut out = features.clone();
    let mut positions = Vec::with_capacity(h + w);
    let mut scores = Vec::with_capacity(h + w);
    for i in 0..h {
        for j in 0..w {
            positions.clear();
            positions.extend((0..w).map(|jj| (i, jj)));
            positions.extend((0..h).filter(|&ii| ii != i).map(|ii| (ii, j)));
            scores.clear();
            let mut max = f64::NEG_INFINITY;
            for &(y, x) in &positions {
                let s: f64 = (0..weights.key_channels).map(|c| q.get(c, i, j) * k.get(c, y, x)).sum();
                max = max.max(s);
                scores.push(s);
            }
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for c in 0..channels {
                let attended: f64 = positions
                    .iter()
                    .zip(&scores)
                    .map(|(&(y, x), s)| s / total * v.get(c, y, x))
                    .sum();
                out.set(c, i, j, features.get(c, i, j) + attended);
            }
        }
    }
    out
}

/// Applies criss-cross attention `recursions` times (1 or 2) with shared weights.
pub fn criss_cross_attention(features: &Tensor3, weights: &AttentionWeights, recursions: usize) -> Result<Tensor3> {
    if !(1..=2).contains(&recursions) {
        return Err(Error::InvalidRecursions(recursions));
    }
    if features.channels() != weights.channels {
        return Err(Error::DimensionMismatch(format!(
            "features have {} channels, weights expect {}",
            features.channels(),
            weights.channels
        )));
    }
    let mut x = single_pass(features, weights);
    for _ in 1..recursions {
        x = single_pass(&x, weights);
    }
    Ok(x)
}
