//! Aggregation of per-candidate view probabilities into one detection
//! probability: max-pooling, mean-pooling, or a sparse linear weighting
//! trained by type-II maximum likelihood.
//!
//! The sparse model is Bernoulli-logistic with a zero-mean Gaussian prior
//! whose diagonal variances are optimized in an outer loop (automatic
//! relevance determination): the inner loop runs Newton iterations to the
//! MAP weights for fixed variances, the outer loop re-estimates each
//! variance from the posterior and prunes coordinates whose variance
//! collapses, leaving exact zeros in the weight vector. Score vectors are
//! sorted ascending before training and fusing, so the fused probability
//! is invariant to any permutation of the input views.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsvm::sigmoid;
use crate::num::Real;

pub const FUSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("score vector is empty")]
    EmptyScores,
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("score vector length {got} does not match model dimension {want}")]
    LengthMismatch { want: usize, got: usize },
    #[error("training data is empty")]
    EmptyInput,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("inconsistent score vector lengths: {0} vs {1}")]
    RaggedInput(usize, usize),
    #[error(
        "inner Newton loop failed to converge after {iterations} iterations \
         (gradient infinity norm {grad_inf:.3e})"
    )]
    InnerNonConvergent { iterations: usize, grad_inf: f64 },
}

/// One candidate's view probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<S> {
    values: Vec<S>,
    sorted: bool,
}

impl<S: Real> ScoreVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self, FusionError> {
        for &v in &values {
            if !(v >= S::zero() && v <= S::one()) {
                return Err(FusionError::OutOfRange(v.as_f64()));
            }
        }
        Ok(Self { values, sorted: false })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    /// Stable ascending sort of the entries.
    pub fn sorted_ascending(&self) -> Self {
        let mut values = self.values.clone();
        values.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
        Self { values, sorted: true }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FusionConfig {
    pub prior_init: f64,
    pub sort_ascending: bool,
    pub inner_tolerance: f64,
    pub inner_max_iterations: usize,
    pub outer_tolerance: f64,
    pub outer_max_iterations: usize,
    pub prune_sigma: f64,
    pub prune_gamma: f64,
    /// Upper bound on re-estimated prior variances; unbounded growth for
    /// saturated coefficients destabilizes the Newton system.
    pub sigma_cap: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            prior_init: 1.0,
            sort_ascending: true,
            inner_tolerance: 1e-6,
            inner_max_iterations: 200,
            outer_tolerance: 1e-3,
            outer_max_iterations: 100,
            prune_sigma: 1e-6,
            prune_gamma: 1e-12,
            sigma_cap: 1e8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FusionModel<S> {
    pub version: u32,
    pub sort_ascending: bool,
    /// Weights over the (sorted) score positions; pruned entries are 0.
    pub w: Vec<S>,
    /// Prior variances of the surviving weights; 0 where pruned.
    pub sigma: Vec<S>,
    pub pruned: Vec<bool>,
}

impl<S: Real> FusionModel<S> {
    pub fn survivors(&self) -> usize {
        self.pruned.iter().filter(|p| !**p).count()
    }
}

impl<S: Real + Serialize> FusionModel<S> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fusion model serializes")
    }
}

impl<S: Real + for<'de> Deserialize<'de>> FusionModel<S> {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Objective/step trace for tests and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct FusionTrace {
    /// Penalized log-likelihood after each accepted inner Newton step, one
    /// sequence per inner solve (the prior is fixed within a sequence).
    pub objective_per_solve: Vec<Vec<f64>>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

pub fn max_pool<S: Real>(s: &ScoreVector<S>) -> Result<S, FusionError> {
    s.values
        .iter()
        .copied()
        .fold(None, |acc: Option<S>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(FusionError::EmptyScores)
}

pub fn mean_pool<S: Real>(s: &ScoreVector<S>) -> Result<S, FusionError> {
    if s.is_empty() {
        return Err(FusionError::EmptyScores);
    }
    // summing in sorted order makes the mean exactly permutation invariant
    let sorted = s.sorted_ascending();
    let sum = sorted.values.iter().fold(S::zero(), |a, &v| a + v);
    Ok(sum / S::real(s.len() as f64))
}

/// Penalized log-likelihood of the sparse fusion objective and its
/// gradient in `w`, with diagonal prior variances `sigma`.
pub fn objective_and_gradient<S: Real>(
    w: &[S],
    sigma: &[S],
    scores: &[Vec<S>],
    labels: &[bool],
) -> (f64, Vec<S>) {
    let d = w.len();
    let mut obj = 0.0f64;
    let mut grad = vec![S::zero(); d];
    for (p, &y) in scores.iter().zip(labels) {
        let mut z = S::zero();
        for (wj, pj) in w.iter().zip(p) {
            z = z + *wj * *pj;
        }
        // y log rho + (1-y) log(1-rho), stable via softplus
        obj += if y { -softplus((-z).as_f64()) } else { -softplus(z.as_f64()) };
        let residual = S::real(f64::from(y as u8)) - sigmoid(z);
        for (g, pj) in grad.iter_mut().zip(p) {
            *g = *g + residual * *pj;
        }
    }
    for j in 0..d {
        if sigma[j] > S::zero() {
            obj -= 0.5 * w[j].as_f64() * w[j].as_f64() / sigma[j].as_f64();
            grad[j] = grad[j] - w[j] / sigma[j];
        }
    }
    (obj, grad)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Trains the sparse fusion weights by the two-loop type-II maximum
/// likelihood procedure. Labels are {0, 1}; score vectors are sorted
/// ascending first when configured.
pub fn train_fusion<S: Real>(
    data: &[(ScoreVector<S>, bool)],
    cfg: &FusionConfig,
) -> Result<FusionModel<S>, FusionError> {
    train_fusion_detailed(data, cfg).map(|(model, _)| model)
}

pub fn train_fusion_detailed<S: Real>(
    data: &[(ScoreVector<S>, bool)],
    cfg: &FusionConfig,
) -> Result<(FusionModel<S>, FusionTrace), FusionError> {
    if data.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let d = data[0].0.len();
    for (s, _) in data {
        if s.len() != d {
            return Err(FusionError::RaggedInput(d, s.len()));
        }
    }
    if d == 0 {
        return Err(FusionError::EmptyScores);
    }
    let n_pos = data.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == data.len() {
        return Err(FusionError::SingleClass);
    }

    let scores: Vec<Vec<S>> = data
        .iter()
        .map(|(s, _)| {
            if cfg.sort_ascending {
                s.sorted_ascending().values.clone()
            } else {
                s.values.clone()
            }
        })
        .collect();
    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();

    let mut w = vec![S::zero(); d];
    let mut sigma = vec![S::real(cfg.prior_init); d];
    let mut active: Vec<usize> = (0..d).collect();
    let mut trace = FusionTrace::default();

    for outer in 0..cfg.outer_max_iterations {
        trace.outer_iterations = outer + 1;
        if active.is_empty() {
            break;
        }
        newton_map(&mut w, &sigma, &active, &scores, &labels, cfg, &mut trace)?;

        // posterior covariance diagonal at the MAP
        let h = negative_hessian(&w, &sigma, &active, &scores);
        let l = cholesky_factor(&h, active.len());
        let cv_diag = inverse_diagonal(&l, active.len());

        let mut max_rel_change = 0.0f64;
        let mut next_active = Vec::with_capacity(active.len());
        for (ai, &j) in active.iter().enumerate() {
            let gamma = 1.0 - cv_diag[ai] / sigma[j].as_f64();
            let new_sigma = if gamma > cfg.prune_gamma {
                (w[j].as_f64() * w[j].as_f64() / gamma).min(cfg.sigma_cap)
            } else {
                0.0
            };
            if gamma <= cfg.prune_gamma || new_sigma < cfg.prune_sigma {
                w[j] = S::zero();
                sigma[j] = S::zero();
            } else {
                let rel = (new_sigma - sigma[j].as_f64()).abs() / sigma[j].as_f64();
                max_rel_change = max_rel_change.max(rel);
                sigma[j] = S::real(new_sigma);
                next_active.push(j);
            }
        }
        let pruned_this_round = next_active.len() != active.len();
        active = next_active;
        if !pruned_this_round && max_rel_change < cfg.outer_tolerance {
            break;
        }
    }

    // final MAP polish under the converged prior
    if !active.is_empty() {
        newton_map(&mut w, &sigma, &active, &scores, &labels, cfg, &mut trace)?;
    }

    let pruned: Vec<bool> = (0..d).map(|j| !active.contains(&j)).collect();
    for j in 0..d {
        if pruned[j] {
            w[j] = S::zero();
            sigma[j] = S::zero();
        }
    }
    Ok((
        FusionModel {
            version: FUSION_FORMAT_VERSION,
            sort_ascending: cfg.sort_ascending,
            w,
            sigma,
            pruned,
        },
        trace,
    ))
}

/// Sigmoid of the learned weighting over the ascending-sorted scores.
pub fn fuse<S: Real>(model: &FusionModel<S>, s: &ScoreVector<S>) -> Result<S, FusionError> {
    if s.len() != model.w.len() {
        return Err(FusionError::LengthMismatch { want: model.w.len(), got: s.len() });
    }
    let sorted;
    let values = if model.sort_ascending && !s.is_sorted() {
        sorted = s.sorted_ascending();
        sorted.values()
    } else {
        s.values()
    };
    let mut z = S::zero();
    for (wj, pj) in model.w.iter().zip(values) {
        z = z + *wj * *pj;
    }
    Ok(sigmoid(z))
}

/// Newton iterations to the MAP of the penalized log-likelihood for fixed
/// prior variances, restricted to the active coordinates. Step halving
/// keeps the objective non-decreasing across accepted steps.
fn newton_map<S: Real>(
    w: &mut [S],
    sigma: &[S],
    active: &[usize],
    scores: &[Vec<S>],
    labels: &[bool],
    cfg: &FusionConfig,
    trace: &mut FusionTrace,
) -> Result<(), FusionError> {
    let m = active.len();
    trace.objective_per_solve.push(Vec::new());
    let (mut obj, mut grad) = objective_and_gradient(w, sigma, scores, labels);
    let mut stagnant = 0usize;
    for iteration in 0..cfg.inner_max_iterations {
        let grad_inf = active
            .iter()
            .map(|&j| grad[j].as_f64().abs())
            .fold(0.0f64, f64::max);
        if grad_inf < cfg.inner_tolerance {
            return Ok(());
        }
        if iteration + 1 == cfg.inner_max_iterations {
            return Err(FusionError::InnerNonConvergent {
                iterations: cfg.inner_max_iterations,
                grad_inf,
            });
        }

        let h = negative_hessian(w, sigma, active, scores);
        let l = cholesky_factor(&h, m);
        let g_active: Vec<f64> = active.iter().map(|&j| grad[j].as_f64()).collect();
        let direction = cholesky_solve(&l, m, &g_active);

        // half the Newton decrement bounds the attainable improvement; once
        // it falls below the objective's float resolution no step can make
        // measurable progress and the MAP is resolved
        let predicted: f64 =
            0.5 * g_active.iter().zip(&direction).map(|(g, d)| g * d).sum::<f64>();
        if predicted <= f64::EPSILON * obj.abs().max(1.0) {
            return Ok(());
        }

        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..60 {
            let mut w_try: Vec<S> = w.to_vec();
            for (ai, &j) in active.iter().enumerate() {
                w_try[j] = w[j] + S::real(step * direction[ai]);
            }
            let (obj_try, grad_try) = objective_and_gradient(&w_try, sigma, scores, labels);
            if obj_try >= obj {
                let gain = obj_try - obj;
                w.copy_from_slice(&w_try);
                obj = obj_try;
                grad = grad_try;
                trace.objective_per_solve.last_mut().expect("solve open").push(obj);
                trace.inner_iterations += 1;
                accepted = true;
                if gain <= f64::EPSILON * obj.abs().max(1.0) {
                    stagnant += 1;
                } else {
                    stagnant = 0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || stagnant >= 3 {
            // no float-measurable progress left: this is the numerical MAP
            return Ok(());
        }
    }
    Ok(())
}

/// A = sum_k rho(1-rho) P P' + diag(1/sigma), restricted to `active`.
fn negative_hessian<S: Real>(
    w: &[S],
    sigma: &[S],
    active: &[usize],
    scores: &[Vec<S>],
) -> Vec<f64> {
    let m = active.len();
    let mut h = vec![0.0f64; m * m];
    for p in scores {
        let mut z = S::zero();
        for (wj, pj) in w.iter().zip(p) {
            z = z + *wj * *pj;
        }
        let rho = sigmoid(z).as_f64();
        let weight = rho * (1.0 - rho);
        for a in 0..m {
            let pa = p[active[a]].as_f64();
            for b in a..m {
                h[a * m + b] += weight * pa * p[active[b]].as_f64();
            }
        }
    }
    for a in 0..m {
        h[a * m + a] += 1.0 / sigma[active[a]].as_f64();
        for b in a + 1..m {
            h[b * m + a] = h[a * m + b];
        }
    }
    h
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix; diagonal jitter makes near-singular posteriors factorable.
fn cholesky_factor(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = sum.max(1e-300).sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    l
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Diagonal of A^{-1} from its Cholesky factor.
fn inverse_diagonal(l: &[f64], n: usize) -> Vec<f64> {
    let mut diag = vec![0.0f64; n];
    let mut unit = vec![0.0f64; n];
    for j in 0..n {
        unit.iter_mut().for_each(|v| *v = 0.0);
        unit[j] = 1.0;
        let col = cholesky_solve(l, n, &unit);
        diag[j] = col[j];
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(values: &[f64]) -> ScoreVector<f64> {
        ScoreVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn pooling_examples() {
        let s = sv(&[0.1, 0.9, 0.3, 0.25]);
        assert_eq!(max_pool(&s).unwrap(), 0.9);
        let c = sv(&[0.5; 6]);
        assert_eq!(max_pool(&c).unwrap(), 0.5);
        assert_eq!(mean_pool(&c).unwrap(), 0.5);
        let halves = sv(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(mean_pool(&halves).unwrap(), 0.5);
        assert!(matches!(
            max_pool(&ScoreVector::<f64>::new(vec![]).unwrap()),
            Err(FusionError::EmptyScores)
        ));
    }

    #[test]
    fn max_dominates_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let s = sv(&(0..27).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            assert!(max_pool(&s).unwrap() >= mean_pool(&s).unwrap());
        }
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let s = sv(&[0.9, 0.1, 0.5, 0.7]);
        let shuffled = sv(&[0.5, 0.9, 0.7, 0.1]);
        assert_eq!(mean_pool(&s).unwrap(), mean_pool(&shuffled).unwrap());
    }

    #[test]
    fn score_vector_validates_range() {
        assert!(matches!(
            ScoreVector::new(vec![0.5, 1.2]),
            Err(FusionError::OutOfRange(_))
        ));
        assert!(matches!(
            ScoreVector::new(vec![-0.01]),
            Err(FusionError::OutOfRange(_))
        ));
    }

    fn bernoulli_data(
        w_true: &[f64],
        n: usize,
        seed: u64,
    ) -> Vec<(ScoreVector<f64>, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p: Vec<f64> = (0..w_true.len()).map(|_| rng.gen()).collect();
                let z: f64 = p.iter().zip(w_true).map(|(a, b)| a * b).sum();
                let y = rng.gen::<f64>() < 1.0 / (1.0 + (-z).exp());
                (sv(&p), y)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 6;
        let scores: Vec<Vec<f64>> =
            (0..40).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<bool> = (0..40).map(|_| rng.gen()).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sigma: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..2.0)).collect();

        let (_, grad) = objective_and_gradient(&w, &sigma, &scores, &labels);
        let h = 1e-5;
        for j in 0..d {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let (op, _) = objective_and_gradient(&wp, &sigma, &scores, &labels);
            let (om, _) = objective_and_gradient(&wm, &sigma, &scores, &labels);
            let fd = (op - om) / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() <= 1e-5 * grad[j].abs().max(1.0),
                "coordinate {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
    }

    #[test]
    fn noise_labels_learn_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut draw = |n: usize| -> Vec<(ScoreVector<f64>, bool)> {
            (0..n)
                .map(|_| {
                    let p: Vec<f64> = (0..27).map(|_| rng.gen()).collect();
                    (sv(&p), rng.gen::<bool>())
                })
                .collect()
        };
        let data = draw(5000);
        let cfg = FusionConfig { sort_ascending: false, ..Default::default() };
        let model = train_fusion(&data, &cfg).unwrap();

        // chance correlations keep a handful of small coefficients alive;
        // most are pruned to exact zero and the survivors stay tiny
        let w_inf = model.w.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        assert!(
            model.survivors() == 0 || (model.survivors() <= 13 && w_inf < 0.25),
            "survivors {} w_inf {w_inf}",
            model.survivors()
        );
        // predictions sit near the (balanced) class prior ...
        let p = fuse(&model, &sv(&[0.5; 27])).unwrap();
        assert!((p - 0.5).abs() < 0.1);
        // ... and the fit carries no signal onto fresh noise
        let fresh = draw(2000);
        let scored: Vec<(f64, bool)> = fresh
            .iter()
            .map(|(s, y)| (fuse(&model, s).unwrap(), *y))
            .collect();
        let auc = crate::eval::roc_auc(&scored).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "fresh-noise auc {auc}");
    }

    #[test]
    fn recovers_sparse_support() {
        let mut w_true = vec![0.0f64; 10];
        w_true[1] = 6.0;
        w_true[4] = -5.0;
        w_true[8] = 4.0;
        let data = bernoulli_data(&w_true, 3000, 21);
        let cfg = FusionConfig { sort_ascending: false, ..Default::default() };
        let model = train_fusion(&data, &cfg).unwrap();
        for (j, &wt) in w_true.iter().enumerate() {
            if wt != 0.0 {
                assert!(!model.pruned[j], "true coordinate {j} was pruned");
                assert_eq!(model.w[j].signum(), wt.signum(), "sign at {j}");
            }
        }
        for j in 0..10 {
            if model.pruned[j] {
                assert_eq!(model.w[j], 0.0);
                assert_eq!(model.sigma[j], 0.0);
            }
        }
    }

    #[test]
    fn objective_non_decreasing_within_each_inner_solve() {
        let data = bernoulli_data(&[3.0, 0.0, -2.0, 0.0, 1.0], 400, 5);
        let cfg = FusionConfig { sort_ascending: false, ..Default::default() };
        let (_, trace) = train_fusion_detailed(&data, &cfg).unwrap();
        assert!(trace.objective_per_solve.iter().any(|s| !s.is_empty()));
        for solve in &trace.objective_per_solve {
            for pair in solve.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
        }
    }

    #[test]
    fn fuse_contract() {
        let zero = FusionModel {
            version: FUSION_FORMAT_VERSION,
            sort_ascending: true,
            w: vec![0.0f64; 5],
            sigma: vec![0.0; 5],
            pruned: vec![true; 5],
        };
        assert_eq!(fuse(&zero, &sv(&[0.9, 0.1, 0.5, 0.2, 0.8])).unwrap(), 0.5);

        // heavy weight on the last (max) sorted position approaches max-pool
        let mut top = zero.clone();
        top.w[4] = 50.0;
        top.pruned = vec![false; 5];
        let p1 = fuse(&top, &sv(&[0.1, 0.2, 0.3, 0.4, 0.95])).unwrap();
        let p2 = fuse(&top, &sv(&[0.1, 0.2, 0.3, 0.4, 0.5])).unwrap();
        assert!(p1 > p2);

        // sorting makes fusion permutation invariant
        let a = fuse(&top, &sv(&[0.9, 0.1, 0.5, 0.2, 0.8])).unwrap();
        let b = fuse(&top, &sv(&[0.1, 0.2, 0.5, 0.8, 0.9])).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            fuse(&top, &sv(&[0.5; 4])),
            Err(FusionError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn training_error_paths() {
        let cfg = FusionConfig::default();
        assert!(matches!(train_fusion::<f64>(&[], &cfg), Err(FusionError::EmptyInput)));
        let one_class = vec![(sv(&[0.5, 0.5]), true), (sv(&[0.2, 0.3]), true)];
        assert!(matches!(train_fusion(&one_class, &cfg), Err(FusionError::SingleClass)));
        let ragged = vec![(sv(&[0.5, 0.5]), true), (sv(&[0.2]), false)];
        assert!(matches!(train_fusion(&ragged, &cfg), Err(FusionError::RaggedInput(2, 1))));
    }

    #[test]
    fn sorted_training_is_input_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let data: Vec<(ScoreVector<f64>, bool)> = (0..300)
            .map(|i| {
                let mut p: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() * 0.5).collect();
                let y = i % 3 == 0;
                if y {
                    p[0] = 0.9 + 0.1 * rng.gen::<f64>();
                }
                (sv(&p), y)
            })
            .collect();
        let shuffled: Vec<(ScoreVector<f64>, bool)> = data
            .iter()
            .map(|(s, y)| {
                let mut v = s.values().to_vec();
                v.reverse();
                (sv(&v), *y)
            })
            .collect();
        let cfg = FusionConfig::default();
        let a = train_fusion(&data, &cfg).unwrap();
        let b = train_fusion(&shuffled, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
