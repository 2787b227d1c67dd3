//! Binary linear SVM: hinge-loss training by dual coordinate ascent.
//!
//! The trainer minimises
//!
//! ```text
//! (lambda / 2) * |w|^2 + (1 / T) * sum_k max(0, 1 - y_k (w . x_k + b))
//! ```
//!
//! with the bias folded in as the weight of a constant-1 input, which makes
//! each coordinate step closed-form (`C = 1 / (lambda * T)` box constraint on
//! the dual variables).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_mismatch, Error, Result};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(dim_mismatch("linear model needs at least one weight"));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if !bias.is_finite() {
            return Err(Error::NonFinite(weights.len()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Dot product without the bias.
    pub fn dot(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(dim_mismatch(format!(
                "model dim {} vs input dim {}",
                self.weights.len(),
                x.len()
            )));
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum())
    }
}

/// `w . x + b`, unclamped.
pub fn score(model: &LinearModel, x: &[f64]) -> Result<f64> {
    Ok(model.dot(x)? + model.bias)
}

/// Logistic function `1 / (1 + e^-x)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_epochs: 100,
            tol: 1e-4,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: LinearModel,
    /// Primal objective of the returned iterate after each epoch.
    pub primal: Vec<f64>,
    /// Dual objective after each epoch.
    pub dual: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

impl TrainReport {
    pub fn objective(&self) -> f64 {
        self.primal.last().copied().unwrap_or(f64::NAN)
    }

    pub fn duality_gap(&self) -> f64 {
        match (self.primal.last(), self.dual.last()) {
            (Some(p), Some(d)) => p - d,
            _ => f64::NAN,
        }
    }
}

/// Primal objective of `model` on the data.
pub fn primal_objective(model: &LinearModel, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let reg = model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias;
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let s: f64 = model.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.bias;
            (1.0 - y * s).max(0.0)
        })
        .sum();
    0.5 * lambda * reg + loss / xs.len() as f64
}

fn check_data(xs: &[Vec<f64>], ys: &[f64]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(dim_mismatch(format!("{} samples vs {} labels", xs.len(), ys.len())));
    }
    let dim = xs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::DegenerateData("no samples".into()))?;
    if dim == 0 {
        return Err(dim_mismatch("zero-length sample vectors"));
    }
    if let Some(k) = xs.iter().position(|x| x.len() != dim) {
        return Err(dim_mismatch(format!(
            "sample {k} has dim {}, expected {dim}",
            xs[k].len()
        )));
    }
    if let Some(k) = ys.iter().position(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::DegenerateData(format!("label {} at sample {k} is not +-1", ys[k])));
    }
    let pos = ys.iter().filter(|&&y| y > 0.0).count();
    if pos == 0 || pos == ys.len() {
        return Err(Error::DegenerateData(format!(
            "need both classes, got {pos} positive of {}",
            ys.len()
        )));
    }
    Ok(dim)
}

pub fn train(xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<LinearModel> {
    Ok(train_with_report(xs, ys, cfg)?.model)
}

/// Dual coordinate ascent with a seeded per-epoch permutation.
///
/// The returned model is the iterate with the lowest primal objective seen
/// at an epoch boundary, so `primal` is non-increasing. Stops once the
/// duality gap of the current iterate falls below `cfg.tol`.
pub fn train_with_report(xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let dim = check_data(xs, ys)?;
    let t = xs.len();
    let c = 1.0 / (cfg.lambda * t as f64);
    let q: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut alpha = vec![0.0; t];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best = LinearModel::zeros(dim);
    let mut best_primal = primal_objective(&best, xs, ys, cfg.lambda);
    let mut primal = Vec::new();
    let mut dual = Vec::new();
    let mut converged = false;
    let mut epochs = 0;

    for _ in 0..cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &xs[i];
            let y = ys[i];
            let margin = y * (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b);
            let grad = margin - 1.0;
            let new_alpha = (alpha[i] - grad / q[i]).clamp(0.0, c);
            let delta = (new_alpha - alpha[i]) * y;
            if delta != 0.0 {
                for (a, v) in w.iter_mut().zip(x) {
                    *a += delta * v;
                }
                b += delta;
                alpha[i] = new_alpha;
            }
        }
        let current = LinearModel {
            weights: w.clone(),
            bias: b,
        };
        let p = primal_objective(&current, xs, ys, cfg.lambda);
        let norm2 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
        let d = cfg.lambda * (alpha.iter().sum::<f64>() - 0.5 * norm2);
        if p <= best_primal {
            best_primal = p;
            best = current;
        }
        primal.push(best_primal);
        dual.push(d);
        if p - d < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(TrainReport {
        model: best,
        primal,
        dual,
        epochs,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_1d() {
        let xs = vec![vec![2.0], vec![2.0], vec![-2.0], vec![-2.0]];
        let ys = vec![1.0, 1.0, -1.0, -1.0];
        let m = train(&xs, &ys, &TrainConfig::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(score(&m, x).unwrap().signum(), *y);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let xs = vec![vec![1.0], vec![2.0]];
        let err = train(&xs, &[1.0, 1.0], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
    }

    #[test]
    fn ragged_input_rejected() {
        let xs = vec![vec![1.0], vec![2.0, 3.0]];
        let err = train(&xs, &[1.0, -1.0], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimMismatch(_)));
    }

    #[test]
    fn duplicated_data_keeps_decisions() {
        let xs = vec![vec![1.0, 0.5], vec![1.5, 1.0], vec![-1.0, 0.2], vec![-0.5, -1.0]];
        let ys = vec![1.0, 1.0, -1.0, -1.0];
        let m1 = train(&xs, &ys, &TrainConfig::default()).unwrap();
        let xs2: Vec<_> = xs.iter().chain(&xs).cloned().collect();
        let ys2: Vec<_> = ys.iter().chain(&ys).copied().collect();
        let m2 = train(&xs2, &ys2, &TrainConfig::default()).unwrap();
        for x in &xs {
            assert_eq!(score(&m1, x).unwrap().signum(), score(&m2, x).unwrap().signum());
        }
    }

    #[test]
    fn score_examples() {
        let m = LinearModel::new(vec![1.0, -1.0], 0.0).unwrap();
        assert_eq!(score(&m, &[3.0, 5.0]).unwrap(), -2.0);
        let m = LinearModel::new(vec![1.0, -1.0], 0.7).unwrap();
        assert_eq!(score(&m, &[0.0, 0.0]).unwrap(), 0.7);
        assert!(score(&m, &[1.0]).is_err());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) - 0.952574).abs() < 1e-6);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
