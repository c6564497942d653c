//! L2-regularized L2-loss linear SVM trained by dual coordinate descent,
//! plus the sigmoid that turns raw margins into view probabilities.
//!
//! Primal: min_w 0.5 w'w + C sum_i max(0, 1 - y_i w'x_i)^2.
//! The dual has a diagonal shift 1/(2C) and no upper bound on alpha;
//! coordinates are visited in a seeded random permutation each epoch, so
//! training is bit-deterministic for a fixed seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::num::Real;

pub const SVM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training data is empty")]
    EmptyInput,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels must be +1 or -1, found {0}")]
    BadLabel(i8),
    #[error("non-finite feature value at row {row}")]
    NonFinite { row: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop when the largest projected-gradient violation in an epoch
    /// drops below this.
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Append a constant-1 feature when set.
    pub bias: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, tolerance: 1e-3, max_epochs: 1000, seed: 0, bias: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinearModel<S> {
    pub version: u32,
    pub feature_dim: usize,
    pub config: SvmConfig,
    /// Length feature_dim, plus one trailing bias weight when configured.
    pub omega: Vec<S>,
}

impl<S: Real + Serialize> LinearModel<S> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

impl<S: Real + for<'de> Deserialize<'de>> LinearModel<S> {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Training outcome with the solver diagnostics the tests pin down.
#[derive(Debug, Clone)]
pub struct SvmFit<S> {
    pub model: LinearModel<S>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub epochs_run: usize,
    pub converged: bool,
    /// Primal objective after each completed epoch.
    pub primal_trace: Vec<f64>,
    /// Dual objective after each completed epoch; exact coordinate
    /// minimization makes this non-decreasing.
    pub dual_trace: Vec<f64>,
}

/// Raw decision value w'x (plus the bias weight when configured).
pub fn score_view<S: Real>(model: &LinearModel<S>, x: &[S]) -> Result<S, SvmError> {
    if x.len() != model.feature_dim {
        return Err(SvmError::DimensionMismatch { expected: model.feature_dim, got: x.len() });
    }
    let mut acc = S::zero();
    for (w, v) in model.omega.iter().zip(x) {
        acc = acc + *w * *v;
    }
    if model.config.bias {
        acc = acc + model.omega[model.feature_dim];
    }
    Ok(acc)
}

/// Numerically stable sigmoid, clamped into the open interval (0, 1).
pub fn sigmoid<S: Real>(t: S) -> S {
    let half = S::real(0.5);
    let p = half + half * (half * t).tanh();
    let hi = S::one() - S::epsilon() * half;
    p.max(S::min_positive_value()).min(hi)
}

/// Primal objective of Eq-style L2/L2 SVM at `omega` (f64 accumulation).
pub fn primal_objective<S: Real>(
    omega: &[S],
    x: &[S],
    labels: &[i8],
    n_features: usize,
    c: f64,
    bias: bool,
) -> f64 {
    let reg: f64 = omega.iter().map(|w| w.as_f64() * w.as_f64()).sum::<f64>() * 0.5;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &x[i * n_features..(i + 1) * n_features];
        let mut m: f64 = row.iter().zip(omega).map(|(v, w)| v.as_f64() * w.as_f64()).sum();
        if bias {
            m += omega[n_features].as_f64();
        }
        let slack = (1.0 - f64::from(y) * m).max(0.0);
        loss += slack * slack;
    }
    reg + c * loss
}

/// Trains by dual coordinate descent. Returns the fitted model with the
/// final primal/dual objective values; `dual_objective <= primal_objective`
/// always (weak duality), and the gap closes at convergence.
pub fn train_svm<S: Real>(
    x: &[S],
    labels: &[i8],
    n_features: usize,
    cfg: &SvmConfig,
) -> Result<SvmFit<S>, SvmError> {
    let n = labels.len();
    if n == 0 {
        return Err(SvmError::EmptyInput);
    }
    if x.len() != n * n_features {
        return Err(SvmError::DimensionMismatch { expected: n * n_features, got: x.len() });
    }
    for (i, &y) in labels.iter().enumerate() {
        if y != 1 && y != -1 {
            return Err(SvmError::BadLabel(y));
        }
        if x[i * n_features..(i + 1) * n_features].iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite { row: i });
        }
    }
    if labels.iter().all(|&y| y == 1) || labels.iter().all(|&y| y == -1) {
        return Err(SvmError::SingleClass);
    }

    let d = n_features + usize::from(cfg.bias);
    let diag = S::real(1.0 / (2.0 * cfg.c));
    let one_extra = S::one();

    // Q_ii = x_i'x_i + 1/(2C), including the appended bias feature
    let q_diag: Vec<S> = (0..n)
        .map(|i| {
            let row = &x[i * n_features..(i + 1) * n_features];
            let mut q = row.iter().fold(S::zero(), |a, &v| a + v * v) + diag;
            if cfg.bias {
                q = q + one_extra;
            }
            q
        })
        .collect();

    let mut omega = vec![S::zero(); d];
    let mut alpha = vec![S::zero(); n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = S::real(cfg.tolerance);

    let mut epochs_run = 0;
    let mut converged = false;
    let mut primal_trace = Vec::new();
    let mut dual_trace = Vec::new();

    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut max_violation = S::zero();

        for &i in &order {
            let row = &x[i * n_features..(i + 1) * n_features];
            let y = S::real(f64::from(labels[i]));
            let mut wx = S::zero();
            for (w, &v) in omega[..n_features].iter().zip(row) {
                wx = wx + *w * v;
            }
            if cfg.bias {
                wx = wx + omega[n_features];
            }
            let g = y * wx - S::one() + diag * alpha[i];
            let pg = if alpha[i] == S::zero() { g.min(S::zero()) } else { g };
            let violation = pg.abs();
            if violation > max_violation {
                max_violation = violation;
            }
            if violation > S::zero() {
                let new_alpha = (alpha[i] - g / q_diag[i]).max(S::zero());
                let delta = (new_alpha - alpha[i]) * y;
                if delta != S::zero() {
                    for (w, &v) in omega[..n_features].iter_mut().zip(row) {
                        *w = *w + delta * v;
                    }
                    if cfg.bias {
                        omega[n_features] = omega[n_features] + delta;
                    }
                }
                alpha[i] = new_alpha;
            }
        }

        epochs_run += 1;
        primal_trace.push(primal_objective(&omega, x, labels, n_features, cfg.c, cfg.bias));
        dual_trace.push(dual_objective(&omega, &alpha, cfg.c));
        if max_violation < tol {
            converged = true;
            break;
        }
    }

    let dual = *dual_trace.last().expect("at least one epoch");
    let primal = *primal_trace.last().expect("at least one epoch");
    Ok(SvmFit {
        model: LinearModel {
            version: SVM_FORMAT_VERSION,
            feature_dim: n_features,
            config: *cfg,
            omega,
        },
        primal_objective: primal,
        dual_objective: dual,
        epochs_run,
        converged,
        primal_trace,
        dual_trace,
    })
}

/// Dual objective e'a - 0.5 (||w||^2 + ||a||^2 / (2C)).
fn dual_objective<S: Real>(omega: &[S], alpha: &[S], c: f64) -> f64 {
    let sum_a: f64 = alpha.iter().map(|a| a.as_f64()).sum();
    let w2: f64 = omega.iter().map(|w| w.as_f64() * w.as_f64()).sum();
    let a2: f64 = alpha.iter().map(|a| a.as_f64() * a.as_f64()).sum();
    sum_a - 0.5 * (w2 + a2 / (2.0 * c))
}
