use crate::error::{Error, Result};
use crate::grid::Grid;

use super::Tensor3;

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaSoftMaxParam(f64);

impl AdaSoftMaxParam {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        Ok(Self(temperature))
    }

    pub fn temperature(self) -> f64 {
        self.0
    }
}

impl Default for AdaSoftMaxParam {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Channel-wise softmax of `logits / T` at every pixel.
pub fn ada_softmax(logits: &Tensor3, param: AdaSoftMaxParam) -> Tensor3 {
    let t = param.temperature();
    let [channels, height, width] = logits.shape();
    let mut out = Tensor3::zeros(channels, height, width);
    let mut scaled = vec![0.0; channels];
    for y in 0..height {
        for x in 0..width {
            let mut max = f64::NEG_INFINITY;
            for (c, s) in scaled.iter_mut().enumerate() {
                *s = logits.get(c, y, x) / t;
                max = max.max(*s);
            }
            let mut sum = 0.0;
            for s in scaled.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            for (c, s) in scaled.iter().enumerate() {
                out.set(c, y, x, s / sum);
            }
        }
    }
    out
}

/// Plain softmax, i.e. `ada_softmax` at T = 1.
pub fn softmax(logits: &Tensor3) -> Tensor3 {
    ada_softmax(logits, AdaSoftMaxParam::default())
}

/// Per-pixel argmax channel; ties resolve to the lower channel.
pub fn argmax_categories(probs: &Tensor3) -> Grid<u16> {
    Grid::from_fn(probs.height(), probs.width(), |y, x| {
        let mut best = 0;
        for c in 1..probs.channels() {
            if probs.get(c, y, x) > probs.get(best, y, x) {
                best = c;
            }
        }
        best as u16
    })
}
