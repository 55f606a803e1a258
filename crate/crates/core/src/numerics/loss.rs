//! Multi-task losses.
//!
//! `semantic_edge_loss` is the class-balanced binary cross-entropy over every
//! channel of the adaptive-temperature softmax, `center_loss` the dense
//! squared error between heatmaps, and `offset_loss` the L1 error restricted
//! to ground-truth thing-edge pixels.

use crate::edgegen::{CenterHeatmap, OffsetField};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::label::{decode_label, CategoryTaxonomy, PanopticEdgeMap, SemanticEdgeMap};

use super::softmax::{ada_softmax, AdaSoftMaxParam};
use super::Tensor3;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_s: f64,
    pub alpha_c: f64,
    pub alpha_o: f64,
}

impl LossWeights {
    pub fn new(alpha_s: f64, alpha_c: f64, alpha_o: f64) -> Result<Self> {
        let all = [alpha_s, alpha_c, alpha_o];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!("weights must be finite and >= 0, got {all:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidWeights("at least one weight must be nonzero".into()));
        }
        Ok(Self { alpha_s, alpha_c, alpha_o })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_s: 1.0, alpha_c: 200.0, alpha_o: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l_s: f64,
    pub l_c: f64,
    pub l_o: f64,
    /// Non-edge pixel fraction of the semantic target, when known.
    pub gamma: Option<f64>,
}

impl LossValue {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticLoss {
    pub value: f64,
    pub gamma: f64,
    pub grad_logits: Tensor3,
    pub grad_temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetGradient {
    pub dy: Grid<f64>,
    pub dx: Grid<f64>,
}

fn shape_error(expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch { expected: expected.to_vec(), actual: actual.to_vec() }
}

/// Reweighted per-channel cross-entropy on `ada_softmax(logits, T)`.
///
/// Returns the loss, the non-edge fraction gamma, and exact gradients of the
/// clamped expression with respect to the logits and to T.
pub fn semantic_edge_loss(
    logits: &Tensor3,
    gt: &SemanticEdgeMap,
    param: AdaSoftMaxParam,
) -> Result<SemanticLoss> {
    let [channels, height, width] = logits.shape();
    if gt.shape() != (height, width) || channels == 0 {
        return Err(shape_error(&[channels, height, width], &[channels, gt.height(), gt.width()]));
    }
    let max_category = channels - 1;
    if let Some(&bad) = gt.as_slice().iter().find(|&&c| usize::from(c) > max_category) {
        return Err(Error::CategoryOutOfRange { category: bad.into(), max: max_category as u16 });
    }
    let t = param.temperature();
    let probs = ada_softmax(logits, param);
    let pixels = height * width;
    let non_edge = gt.as_slice().iter().filter(|&&c| c == 0).count();
    let gamma = if pixels == 0 { 0.0 } else { non_edge as f64 / pixels as f64 };

    let mut loss = 0.0;
    let mut grad = Tensor3::zeros(channels, height, width);
    let mut grad_t = 0.0;
    let mut dl_dp = vec![0.0; channels];
    for y in 0..height {
        for x in 0..width {
            let target = usize::from(gt.get(y, x));
            let mut weighted = 0.0;
            for (k, g) in dl_dp.iter_mut().enumerate() {
                let p = probs.get(k, y, x);
                let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                let inside = (PROB_EPS..=1.0 - PROB_EPS).contains(&p);
                *g = if k == target {
                    loss -= gamma * clamped.ln();
                    if inside { -gamma / clamped } else { 0.0 }
                } else {
                    loss -= (1.0 - gamma) * (1.0 - clamped).ln();
                    if inside { (1.0 - gamma) / (1.0 - clamped) } else { 0.0 }
                };
                weighted += *g * p;
            }
            // d softmax: dL/dz_j = p_j (g_j - sum_k g_k p_k), z = logits / T
            for (j, g) in dl_dp.iter().enumerate() {
                let dz = probs.get(j, y, x) * (g - weighted);
                grad.set(j, y, x, dz / t);
                grad_t -= dz * logits.get(j, y, x) / (t * t);
            }
        }
    }
    Ok(SemanticLoss { value: loss, gamma, grad_logits: grad, grad_temperature: grad_t })
}

/// Sum of squared per-pixel differences and its gradient `2 (pred - gt)`.
pub fn center_loss(pred: &CenterHeatmap, gt: &CenterHeatmap) -> Result<(f64, Grid<f64>)> {
    gt.check_shape(pred)?;
    let mut loss = 0.0;
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let d = p - g;
        loss += d * d;
    }
    let grad = Grid::from_vec(
        pred.height(),
        pred.width(),
        pred.as_slice().iter().zip(gt.as_slice()).map(|(p, g)| 2.0 * (p - g)).collect(),
    )?;
    Ok((loss, grad))
}

/// L1 offset error over masked pixels. The subgradient at zero difference is 0.
pub fn offset_loss(pred: &OffsetField, gt: &OffsetField, mask: &Grid<bool>) -> Result<(f64, OffsetGradient)> {
    gt.dy.check_shape(&pred.dy)?;
    gt.dy.check_shape(mask)?;
    let (h, w) = mask.shape();
    let mut loss = 0.0;
    let mut gdy = Grid::filled(h, w, 0.0);
    let mut gdx = Grid::filled(h, w, 0.0);
    for (row, col, on) in mask.indexed() {
        if !on {
            continue;
        }
        let ey = pred.dy.get(row, col) - gt.dy.get(row, col);
        let ex = pred.dx.get(row, col) - gt.dx.get(row, col);
        loss += ey.abs() + ex.abs();
        gdy.set(row, col, sign(ey));
        gdx.set(row, col, sign(ex));
    }
    Ok((loss, OffsetGradient { dy: gdy, dx: gdx }))
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

/// Pixels carrying a thing-category edge label.
pub fn thing_edge_mask(edges: &PanopticEdgeMap, taxonomy: &CategoryTaxonomy) -> Grid<bool> {
    edges.map(|label| matches!(decode_label(label, taxonomy), Ok(Some(l)) if taxonomy.is_thing(l.category)))
}

pub fn total_loss(l_s: f64, l_c: f64, l_o: f64, weights: &LossWeights) -> Result<LossValue> {
    for (name, value) in [("l_s", l_s), ("l_c", l_c), ("l_o", l_o)] {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::NegativeComponent { name, value });
        }
    }
    Ok(LossValue {
        total: weights.alpha_s * l_s + weights.alpha_c * l_c + weights.alpha_o * l_o,
        l_s,
        l_c,
        l_o,
        gamma: None,
    })
}
