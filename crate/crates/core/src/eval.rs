//! Evaluation protocol: patient-level fold splitting, ROC AUC, the
//! two-sample Kolmogorov-Smirnov test, and object-level FROC curves.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {k} patients for {k} folds, got {got}")]
    TooFewPatients { k: usize, got: usize },
    #[error("need both classes present")]
    SingleClass,
    #[error("empty input")]
    EmptyInput,
    #[error("n_volumes must be positive")]
    NoVolumes,
    #[error("score is not finite")]
    NonFiniteScore,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Disjoint patient folds of near-equal size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
    pub k: usize,
    pub seed: u64,
}

impl FoldSplit {
    /// Patients outside fold `i`.
    pub fn training_patients(&self, i: usize) -> Vec<String> {
        let mut out: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        out.sort();
        out
    }
}

/// Seeded shuffle followed by round-robin assignment; fold sizes differ by
/// at most one and the same seed reproduces the same folds.
pub fn split_patients(patients: &[String], k: usize, seed: u64) -> Result<FoldSplit, EvalError> {
    if patients.len() < k || k == 0 {
        return Err(EvalError::TooFewPatients { k, got: patients.len() });
    }
    let mut shuffled = patients.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, p) in shuffled.into_iter().enumerate() {
        folds[i % k].push(p);
    }
    Ok(FoldSplit { folds, k, seed })
}

/// Mann-Whitney AUC with ties counted half.
pub fn roc_auc<S: Real>(scores: &[(S, bool)]) -> Result<f64, EvalError> {
    let n_pos = scores.iter().filter(|(_, y)| *y).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut sorted: Vec<(S, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // average ranks over tie groups
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // ranks are 1-based
        for item in &sorted[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value at
/// effective size n_a n_b / (n_a + n_b).
pub fn ks_test<S: Real>(a: &[S], b: &[S]) -> Result<KsResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sa: Vec<f64> = a.iter().map(|v| v.as_f64()).collect();
    let mut sb: Vec<f64> = b.iter().map(|v| v.as_f64()).collect();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite"));

    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d = 0.0f64;
    while ia < sa.len() && ib < sb.len() {
        let t = sa[ia].min(sb[ib]);
        while ia < sa.len() && sa[ia] <= t {
            ia += 1;
        }
        while ib < sb.len() && sb[ib] <= t {
            ib += 1;
        }
        let diff = (ia as f64 / na - ib as f64 / nb).abs();
        if diff > d {
            d = diff;
        }
    }

    let n_eff = na * nb / (na + nb);
    let lambda = n_eff.sqrt() * d;
    Ok(KsResult { d, p_value: kolmogorov_q(lambda) })
}

/// Asymptotic Kolmogorov survival function, series truncated at 100 terms.
/// Below lambda = 0.2 the survival probability is 1 within 1e-12 and the
/// truncated series no longer converges, so 1 is returned directly.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    for j in 1..=100u32 {
        let j = f64::from(j);
        let term = 2.0 * (-1.0f64).powi(j as i32 + 1) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// A scored candidate entering FROC computation. `label` is +1/-1;
/// `gt_object_id` identifies the claimed object (0 for negatives).
#[derive(Debug, Clone, PartialEq)]
pub struct FrocInput {
    pub patient: String,
    pub gt_object_id: u16,
    pub label: i8,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub fp_per_volume: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub n_volumes: usize,
    pub n_objects: usize,
}

/// Object-level FROC: for each distinct score threshold (descending), the
/// fraction of ground-truth objects claimed by a positive candidate at or
/// above it versus negative candidates per volume. `n_objects` is the
/// total ground-truth object count, which may exceed the objects present
/// in `candidates` when candidate generation missed some.
///
/// Points are emitted with strictly increasing fp_per_volume; where two
/// thresholds share an FP count only the higher-sensitivity point is kept.
pub fn froc(
    candidates: &[FrocInput],
    n_volumes: usize,
    n_objects: usize,
) -> Result<FrocCurve, EvalError> {
    if n_volumes == 0 {
        return Err(EvalError::NoVolumes);
    }
    if candidates.iter().any(|c| !c.score.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let mut sorted: Vec<&FrocInput> = candidates.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite")
            .then_with(|| a.patient.cmp(&b.patient))
            .then_with(|| a.gt_object_id.cmp(&b.gt_object_id))
    });

    let mut points: Vec<FrocPoint> = Vec::new();
    let mut claimed: std::collections::BTreeSet<(String, u16)> = Default::default();
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score >= threshold {
            let c = sorted[i];
            if c.label > 0 && c.gt_object_id > 0 {
                claimed.insert((c.patient.clone(), c.gt_object_id));
            } else {
                fp += 1;
            }
            i += 1;
        }
        let sensitivity = if n_objects == 0 {
            1.0
        } else {
            claimed.len() as f64 / n_objects as f64
        };
        let fp_per_volume = fp as f64 / n_volumes as f64;
        if let Some(last) = points.last_mut() {
            if last.fp_per_volume == fp_per_volume {
                // same FP rate reached with more recall at a lower threshold
                last.threshold = threshold;
                last.sensitivity = sensitivity;
                continue;
            }
        }
        points.push(FrocPoint { threshold, fp_per_volume, sensitivity });
    }
    Ok(FrocCurve { points, n_volumes, n_objects })
}

/// Step-function sensitivity of the last point at or below the queried FP
/// rate; 0 before the first point.
pub fn sensitivity_at(curve: &FrocCurve, fp_per_vol: f64) -> f64 {
    curve
        .points
        .iter()
        .take_while(|p| p.fp_per_volume <= fp_per_vol)
        .last()
        .map_or(0.0, |p| p.sensitivity)
}

/// Area under the step-interpolated FROC over [0, max_fp], extended at the
/// final sensitivity beyond the last point.
pub fn partial_auc(curve: &FrocCurve, max_fp: f64) -> f64 {
    let mut area = 0.0f64;
    let mut x = 0.0f64;
    let mut sens = 0.0f64;
    for p in &curve.points {
        if p.fp_per_volume > max_fp {
            break;
        }
        area += sens * (p.fp_per_volume - x);
        x = p.fp_per_volume;
        sens = p.sensitivity;
    }
    area + sens * (max_fp - x).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceStats {
    pub mean_pos_slices: f64,
    pub mean_neg_slices: f64,
    pub auc: f64,
}

/// Per-VOI counts of views scoring at or above the cutoff, averaged over
/// positive and negative VOIs separately, plus the slice-level AUC.
pub fn slice_stats<S: Real>(
    vois: &[(Vec<S>, bool)],
    cutoff: S,
) -> Result<SliceStats, EvalError> {
    if vois.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut pos_count = 0usize;
    let mut neg_count = 0usize;
    let mut pos_slices = 0usize;
    let mut neg_slices = 0usize;
    let mut flat: Vec<(S, bool)> = Vec::new();
    for (scores, positive) in vois {
        let above = scores.iter().filter(|&&p| p >= cutoff).count();
        if *positive {
            pos_count += 1;
            pos_slices += above;
        } else {
            neg_count += 1;
            neg_slices += above;
        }
        flat.extend(scores.iter().map(|&p| (p, *positive)));
    }
    let auc = roc_auc(&flat)?;
    Ok(SliceStats {
        mean_pos_slices: if pos_count == 0 { 0.0 } else { pos_slices as f64 / pos_count as f64 },
        mean_neg_slices: if neg_count == 0 { 0.0 } else { neg_slices as f64 / neg_count as f64 },
        auc,
    })
}

/// Writes `threshold,fp_per_vol,sensitivity` rows with a header.
pub fn write_froc_csv(curve: &FrocCurve, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("threshold,fp_per_vol,sensitivity\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fp_per_volume, p.sensitivity));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}
