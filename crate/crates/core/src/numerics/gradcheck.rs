//! Central finite differences and the analytic-gradient check suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::edgegen::OffsetField;
use crate::error::{Error, Result};
use crate::grid::Grid;

use super::loss::{center_loss, offset_loss, semantic_edge_loss};
use super::softmax::AdaSoftMaxParam;
use super::Tensor3;

/// Per-coordinate central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::NonPositiveEps(eps));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`, or 0 when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|e| e * e).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { trials: 100, tolerance: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub suites: Vec<SuiteResult>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

const SEMANTIC_EPS: f64 = 1e-5;
const DENSE_EPS: f64 = 1e-6;
/// Offset coordinates closer than this to the L1 kink are left out of the comparison.
const KINK_FILTER: f64 = 1e-3;

fn random_logits(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize) -> Tensor3 {
    let normal = Normal::new(0.0, 1.5).expect("valid normal");
    Tensor3::from_fn(channels, h, w, |_, _, _| normal.sample(rng))
}

/// Returns (logit error, temperature error) for one random instance.
fn semantic_trial(rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let (channels, h, w) = (3, 4, 4);
    let logits = random_logits(rng, channels, h, w);
    let gt = Grid::from_fn(h, w, |_, _| rng.random_range(0..channels as u16));
    let t = rng.random_range(0.5..2.0);
    let param = AdaSoftMaxParam::new(t)?;
    let analytic = semantic_edge_loss(&logits, &gt, param)?;

    let at_logits = |x: &[f64]| {
        let l = Tensor3::from_vec(channels, h, w, x.to_vec()).expect("shape");
        semantic_edge_loss(&l, &gt, param).expect("valid").value
    };
    let numeric = finite_diff_gradient(at_logits, logits.as_slice(), SEMANTIC_EPS)?;
    let logit_err = relative_error(analytic.grad_logits.as_slice(), &numeric);

    let at_t = |x: &[f64]| {
        semantic_edge_loss(&logits, &gt, AdaSoftMaxParam::new(x[0]).expect("positive")).expect("valid").value
    };
    let numeric_t = finite_diff_gradient(at_t, &[t], SEMANTIC_EPS)?;
    let t_err = relative_error(&[analytic.grad_temperature], &numeric_t);
    Ok((logit_err, t_err))
}

fn center_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w) = (8, 8);
    let pred = Grid::from_fn(h, w, |_, _| rng.random::<f64>());
    let gt = Grid::from_fn(h, w, |_, _| rng.random::<f64>());
    let (_, grad) = center_loss(&pred, &gt)?;
    let f = |x: &[f64]| {
        let p = Grid::from_vec(h, w, x.to_vec()).expect("shape");
        center_loss(&p, &gt).expect("valid").0
    };
    let numeric = finite_diff_gradient(f, pred.as_slice(), DENSE_EPS)?;
    Ok(relative_error(grad.as_slice(), &numeric))
}

fn offset_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w) = (4, 4);
    let normal = Normal::new(0.0, 3.0).expect("valid normal");
    let mut field = || Grid::from_fn(h, w, |_, _| normal.sample(rng));
    let pred = OffsetField::new(field(), field())?;
    let gt = OffsetField::new(field(), field())?;
    let mask = Grid::from_fn(h, w, |_, _| rng.random_bool(0.6));
    let (_, grad) = offset_loss(&pred, &gt, &mask)?;

    let n = h * w;
    let flat: Vec<f64> = pred.dy.as_slice().iter().chain(pred.dx.as_slice()).copied().collect();
    let f = |x: &[f64]| {
        let p = OffsetField {
            dy: Grid::from_vec(h, w, x[..n].to_vec()).expect("shape"),
            dx: Grid::from_vec(h, w, x[n..].to_vec()).expect("shape"),
        };
        offset_loss(&p, &gt, &mask).expect("valid").0
    };
    let numeric = finite_diff_gradient(f, &flat, DENSE_EPS)?;
    let analytic: Vec<f64> = grad.dy.as_slice().iter().chain(grad.dx.as_slice()).copied().collect();
    let gt_flat: Vec<f64> = gt.dy.as_slice().iter().chain(gt.dx.as_slice()).copied().collect();
    let keep: Vec<usize> = (0..2 * n).filter(|&i| (flat[i] - gt_flat[i]).abs() > KINK_FILTER).collect();
    let a: Vec<f64> = keep.iter().map(|&i| analytic[i]).collect();
    let b: Vec<f64> = keep.iter().map(|&i| numeric[i]).collect();
    Ok(relative_error(&a, &b))
}

/// Runs every suite for `config.trials` random instances. A suite passes when
/// its worst relative error is within `config.tolerance`.
pub fn run_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut logits, mut temp, mut center, mut offset) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..config.trials {
        let (a, b) = semantic_trial(&mut rng)?;
        logits = logits.max(a);
        temp = temp.max(b);
        center = center.max(center_trial(&mut rng)?);
        offset = offset.max(offset_trial(&mut rng)?);
    }
    let suite = |name, err: f64| SuiteResult {
        name,
        trials: config.trials,
        max_relative_error: err,
        passed: err <= config.tolerance,
    };
    Ok(GradCheckReport {
        suites: vec![
            suite("semantic_edge_loss/logits", logits),
            suite("semantic_edge_loss/temperature", temp),
            suite("center_loss", center),
            suite("offset_loss", offset),
        ],
    })
}
