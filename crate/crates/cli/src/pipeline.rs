//! End-to-end pipeline driver: dataset loading, per-fold candidate
//! generation, view classification, score fusion, pooled FROC evaluation,
//! and the on-disk artifact layout. Every stage is deterministic under a
//! fixed seed; random streams are derived per stage and per fold.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vagg_core::candgen::{self, Candidate, CandidateSet};
use vagg_core::eval::{
    self, froc, ks_test, partial_auc, sensitivity_at, slice_stats, split_patients, FoldSplit,
    FrocCurve, FrocInput, KsResult, SliceStats,
};
use vagg_core::features3d::extract_grid_features;
use vagg_core::forest::{self, Calibration, ForestConfig};
use vagg_core::fusion::{self, FusionConfig, ScoreVector};
use vagg_core::hog::{encode_hog, HogConfig};
use vagg_core::linsvm::{score_view, sigmoid, train_svm, SvmConfig};
use vagg_core::num::derive_seed_str;
use vagg_core::views::{montage, sample_views, ViewSamplerConfig};
use vagg_core::volume::{load_volume, save_volume, VoxelIndex};
use vagg_core::{Forest, FusionWeights, GridFeatures, ImageVolume, MaskVolume, SvmModel};

use crate::config::{FusionMode, PipelineConfig};
use crate::CliError;

pub const REPORT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// dataset loading
// ---------------------------------------------------------------------------

pub struct LoadedPatient {
    pub id: String,
    pub image: ImageVolume,
    pub mask: MaskVolume,
    pub n_objects: usize,
}

pub struct LoadedDataset {
    pub patients: Vec<LoadedPatient>,
}

impl LoadedDataset {
    pub fn ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> usize {
        self.patients
            .iter()
            .position(|p| p.id == id)
            .unwrap_or_else(|| panic!("unknown patient {id}"))
    }

    pub fn total_objects(&self) -> usize {
        self.patients.iter().map(|p| p.n_objects).sum()
    }
}

/// Loads and merges one or more manifest datasets, sorted by patient id.
pub fn load_dataset(manifests: &[PathBuf]) -> Result<LoadedDataset, CliError> {
    if manifests.is_empty() {
        return Err(CliError::Usage("at least one --data manifest is required".into()));
    }
    let mut records: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for manifest in manifests {
        let parsed = vagg_core::synth::read_manifest(manifest)
            .map_err(|e| CliError::Data(format!("manifest {}: {e}", manifest.display())))?;
        if parsed.patients.is_empty() {
            return Err(CliError::Data(format!("manifest {} lists no patients", manifest.display())));
        }
        for p in parsed.patients {
            records.push((
                p.patient_id,
                parsed.root.join(&p.image_path),
                parsed.root.join(&p.mask_path),
            ));
        }
    }
    records.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in records.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(CliError::Data(format!(
                "duplicate patient id {:?} across merged datasets",
                pair[0].0
            )));
        }
    }

    let patients: Vec<LoadedPatient> = records
        .into_par_iter()
        .map(|(id, image_path, mask_path)| -> Result<LoadedPatient, CliError> {
            let image: ImageVolume = load_volume(&image_path)
                .map_err(|e| CliError::Data(format!("load {}: {e}", image_path.display())))?;
            let mask: MaskVolume = load_volume(&mask_path)
                .map_err(|e| CliError::Data(format!("load {}: {e}", mask_path.display())))?;
            let n_objects = mask.data().iter().copied().max().unwrap_or(0) as usize;
            Ok(LoadedPatient { id, image, mask, n_objects })
        })
        .collect::<Result<_, _>>()?;
    Ok(LoadedDataset { patients })
}

/// Grid feature fields for every patient, in patient order.
pub fn compute_features(ds: &LoadedDataset) -> Result<Vec<GridFeatures>, CliError> {
    ds.patients
        .par_iter()
        .map(|p| {
            extract_grid_features(&p.image)
                .map_err(|e| CliError::Data(format!("features for {}: {e}", p.id)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// candidate generation stage
// ---------------------------------------------------------------------------

pub struct CandgenModel {
    pub forest: Forest,
    pub threshold: f64,
    pub calibration: Calibration,
}

/// Trains the voxel forest on the given patients and fixes its operating
/// threshold (calibrated for full training-set sensitivity unless the
/// config pins one).
pub fn train_candgen(
    ds: &LoadedDataset,
    features: &[GridFeatures],
    train_idx: &[usize],
    cfg: &PipelineConfig,
    seed: u64,
    tag: &str,
) -> Result<CandgenModel, CliError> {
    let (x, labels) = voxel_training_set(
        ds,
        features,
        train_idx,
        cfg.candgen.neg_pos_ratio,
        derive_seed_str(seed, &format!("{tag}:subsample")),
    );
    let forest_cfg = ForestConfig {
        n_trees: cfg.candgen.n_trees,
        max_depth: cfg.candgen.max_depth,
        min_leaf: cfg.candgen.min_leaf,
        seed: derive_seed_str(seed, &format!("{tag}:forest")),
    };
    let mut model = train_forest_stage(&x, &labels, forest_cfg)?;

    let calibration = match cfg.candgen.threshold {
        Some(threshold) => evaluate_fixed_threshold(ds, features, train_idx, &model, threshold)?,
        None => {
            let validation: Vec<(&GridFeatures, &MaskVolume)> =
                train_idx.iter().map(|&i| (&features[i], &ds.patients[i].mask)).collect();
            forest::calibrate_threshold(&model, &validation)
                .map_err(|e| CliError::Convergence(format!("candgen calibration [{tag}]: {e}")))?
        }
    };
    model.operating_threshold = Some(calibration.threshold as f32);
    Ok(CandgenModel { forest: model, threshold: calibration.threshold, calibration })
}

fn train_forest_stage(x: &[f32], labels: &[bool], cfg: ForestConfig) -> Result<Forest, CliError> {
    forest::train_forest(x, labels, vagg_core::features3d::FEATURES_PER_VOXEL, &cfg)
        .map_err(|e| CliError::Data(format!("forest training: {e}")))
}

fn voxel_training_set(
    ds: &LoadedDataset,
    features: &[GridFeatures],
    train_idx: &[usize],
    neg_pos_ratio: f64,
    seed: u64,
) -> (Vec<f32>, Vec<bool>) {
    let mut labels: Vec<bool> = Vec::new();
    let mut refs: Vec<(usize, usize)> = Vec::new();
    for &pi in train_idx {
        let field = &features[pi];
        let mask = &ds.patients[pi].mask;
        for gz in 0..field.grid_dims[2] {
            for gy in 0..field.grid_dims[1] {
                for gx in 0..field.grid_dims[0] {
                    let gi = field.grid_index(gx, gy, gz);
                    let [x, y, z] = field.source_voxel(gx, gy, gz);
                    labels.push(mask.at(x, y, z) > 0);
                    refs.push((pi, gi));
                }
            }
        }
    }
    let rows = forest::subsample_negatives(&labels, neg_pos_ratio, seed);
    let d = vagg_core::features3d::FEATURES_PER_VOXEL;
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for &r in &rows {
        let (pi, gi) = refs[r];
        x.extend_from_slice(features[pi].vector(gi));
        y.push(labels[r]);
    }
    (x, y)
}

fn evaluate_fixed_threshold(
    ds: &LoadedDataset,
    features: &[GridFeatures],
    idx: &[usize],
    model: &Forest,
    threshold: f64,
) -> Result<Calibration, CliError> {
    let mut hit = 0usize;
    let mut total = 0usize;
    let mut fp = 0usize;
    for &pi in idx {
        let cs = candidates_for(ds, features, pi, model, threshold)?;
        let stats = candgen::candgen_sensitivity(&cs, &ds.patients[pi].mask);
        hit += (stats.object_sensitivity * ds.patients[pi].n_objects as f64).round() as usize;
        total += ds.patients[pi].n_objects;
        fp += stats.fp_per_case;
    }
    Ok(Calibration {
        threshold,
        object_sensitivity: if total == 0 { 1.0 } else { hit as f64 / total as f64 },
        fp_per_case: fp as f64 / idx.len().max(1) as f64,
    })
}

/// Candidates of one patient under a trained candgen model.
pub fn candidates_for(
    ds: &LoadedDataset,
    features: &[GridFeatures],
    patient_idx: usize,
    model: &Forest,
    threshold: f64,
) -> Result<CandidateSet, CliError> {
    let patient = &ds.patients[patient_idx];
    let probmap = forest::predict_probmap(model, &features[patient_idx])
        .map_err(|e| CliError::Data(format!("probmap for {}: {e}", patient.id)))?;
    let centroids = candgen::generate_candidates(&probmap, threshold as f32);
    candgen::label_candidates(&centroids, &patient.mask, &patient.id, threshold, &patient.id)
        .map_err(|e| CliError::Data(format!("labeling {}: {e}", patient.id)))
}

// ---------------------------------------------------------------------------
// cross-validation driver
// ---------------------------------------------------------------------------

/// Per-fold candidate material shared by every HOG resolution.
pub struct FoldData {
    pub fold: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub calibration: Calibration,
    pub train_candidates: Vec<Candidate>,
    pub test_candidates: Vec<Candidate>,
}

/// Stage 1 of the protocol: per fold, train candidate generation on the
/// training patients (or reuse a frozen model), calibrate, and emit
/// labeled candidates for both sides of the fold.
pub fn build_fold_data(
    ds: &LoadedDataset,
    features: &[GridFeatures],
    split: &FoldSplit,
    cfg: &PipelineConfig,
    seed: u64,
    frozen: Option<&CandgenModel>,
) -> Result<Vec<FoldData>, CliError> {
    let mut folds = Vec::with_capacity(split.k);
    for f in 0..split.k {
        let test_ids = &split.folds[f];
        let train_ids = split.training_patients(f);
        let train_idx: Vec<usize> = train_ids.iter().map(|id| ds.index_of(id)).collect();
        let mut test_idx: Vec<usize> = test_ids.iter().map(|id| ds.index_of(id)).collect();
        test_idx.sort_unstable();

        let owned;
        let model: &CandgenModel = match frozen {
            Some(m) => m,
            None => {
                owned = train_candgen(ds, features, &train_idx, cfg, seed, &format!("fold{f}"))?;
                &owned
            }
        };

        let collect = |idx: &[usize]| -> Result<Vec<Candidate>, CliError> {
            let mut out = Vec::new();
            for &pi in idx {
                out.extend(candidates_for(ds, features, pi, &model.forest, model.threshold)?.candidates);
            }
            Ok(out)
        };
        folds.push(FoldData {
            fold: f,
            train_candidates: collect(&train_idx)?,
            test_candidates: collect(&test_idx)?,
            train_idx,
            test_idx,
            calibration: model.calibration.clone(),
        });
    }
    Ok(folds)
}

/// Descriptor matrix (f64 rows) and view labels for a candidate list.
fn descriptor_matrix(
    ds: &LoadedDataset,
    candidates: &[Candidate],
    view_cfg: &ViewSamplerConfig,
    hog_cfg: &HogConfig,
) -> Result<(Vec<f64>, Vec<i8>, usize), CliError> {
    let per_cand = view_cfg.views_per_candidate();
    let d = hog_cfg.descriptor_dim();
    let rows: Vec<Result<(Vec<f64>, Vec<i8>), CliError>> = candidates
        .par_iter()
        .enumerate()
        .map(|(ci, cand)| {
            let pi = ds.index_of(&cand.patient_id);
            let views = sample_views(&ds.patients[pi].image, cand, ci, view_cfg)
                .map_err(|e| CliError::Data(format!("views for {}: {e}", cand.patient_id)))?;
            let mut flat = Vec::with_capacity(per_cand * d);
            let mut labels = Vec::with_capacity(per_cand);
            for view in &views {
                let desc = encode_hog(&view.pixels, hog_cfg)
                    .map_err(|e| CliError::Data(format!("hog: {e}")))?;
                flat.extend(desc.values.iter().map(|&v| f64::from(v)));
                labels.push(view.label);
            }
            Ok((flat, labels))
        })
        .collect();

    let mut matrix = Vec::with_capacity(candidates.len() * per_cand * d);
    let mut labels = Vec::with_capacity(candidates.len() * per_cand);
    for row in rows {
        let (flat, l) = row?;
        matrix.extend(flat);
        labels.extend(l);
    }
    Ok((matrix, labels, d))
}

/// Per-candidate fused probabilities under every fusion mode.
struct FusedScores {
    sparse: Vec<f64>,
    max: Vec<f64>,
    mean: Vec<f64>,
}

fn fuse_all_modes(
    score_vectors: &[ScoreVector<f64>],
    sparse_model: &FusionWeights,
) -> Result<FusedScores, CliError> {
    let mut out = FusedScores {
        sparse: Vec::with_capacity(score_vectors.len()),
        max: Vec::with_capacity(score_vectors.len()),
        mean: Vec::with_capacity(score_vectors.len()),
    };
    for sv in score_vectors {
        out.sparse.push(
            fusion::fuse(sparse_model, sv)
                .map_err(|e| CliError::Data(format!("fusion: {e}")))?,
        );
        out.max
            .push(fusion::max_pool(sv).map_err(|e| CliError::Data(format!("fusion: {e}")))?);
        out.mean
            .push(fusion::mean_pool(sv).map_err(|e| CliError::Data(format!("fusion: {e}")))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub partial_auc_10: f64,
    pub sens_at_3: f64,
    pub sens_at_6: f64,
    pub sens_at_10: f64,
}

fn mode_metrics(curve: &FrocCurve) -> ModeMetrics {
    ModeMetrics {
        partial_auc_10: partial_auc(curve, 10.0),
        sens_at_3: sensitivity_at(curve, 3.0),
        sens_at_6: sensitivity_at(curve, 6.0),
        sens_at_10: sensitivity_at(curve, 10.0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub fold: usize,
    pub threshold: f64,
    pub object_sensitivity: f64,
    pub fp_per_case: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateCounts {
    pub train_total: usize,
    pub test_total: usize,
    pub test_positive: usize,
    pub test_negative: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub version: u32,
    pub seed: u64,
    pub folds: usize,
    pub hog_cells: usize,
    pub views_per_candidate: usize,
    pub n_patients: usize,
    pub n_objects: usize,
    pub calibration: Vec<CalibrationSummary>,
    pub candidate_counts: CandidateCounts,
    pub slice_auc: f64,
    pub ks: KsResult,
    pub slice_stats: SliceStats,
    pub fusion_survivors: Vec<usize>,
    pub validation: BTreeMap<String, ModeMetrics>,
    pub training: BTreeMap<String, ModeMetrics>,
}

pub struct CvOutcome {
    pub report: CvReport,
    pub val_curves: BTreeMap<&'static str, FrocCurve>,
    pub train_curves: BTreeMap<&'static str, FrocCurve>,
    /// Held-out view probabilities split by view label.
    pub pos_view_scores: Vec<f64>,
    pub neg_view_scores: Vec<f64>,
    /// Wall-clock seconds per held-out volume for the scoring stage
    /// (views + descriptors + view scoring + fusion), not serialized.
    pub scoring_seconds_per_volume: f64,
    /// Per-fold test rows for artifact emission.
    fold_rows: Vec<Vec<TestScoreRow>>,
}

struct TestScoreRow {
    candidate: Candidate,
    p_sparse: f64,
    p_max: f64,
    p_mean: f64,
}

/// Stage 2 of the protocol at one HOG resolution: per fold, train the view
/// classifier on training-fold views, score both sides, train the sparse
/// fusion on training-fold score vectors, and pool everything into FROC
/// curves, slice statistics, and the KS separation test.
pub fn classify_and_fuse(
    ds: &LoadedDataset,
    features_seed: u64,
    folds: &[FoldData],
    cfg: &PipelineConfig,
    cells_per_side: usize,
) -> Result<CvOutcome, CliError> {
    let view_cfg = ViewSamplerConfig { k: cfg.views.k, window: 45 };
    let per_cand = view_cfg.views_per_candidate();
    let mut hog_cfg = HogConfig::new(cells_per_side)
        .map_err(|e| CliError::Usage(format!("hog config: {e}")))?;
    hog_cfg.clamp = cfg.hog.clamp;

    let mut val_inputs: BTreeMap<&'static str, Vec<FrocInput>> = BTreeMap::new();
    let mut train_inputs: BTreeMap<&'static str, Vec<FrocInput>> = BTreeMap::new();
    for mode in FusionMode::ALL {
        val_inputs.insert(mode.name(), Vec::new());
        train_inputs.insert(mode.name(), Vec::new());
    }
    let mut pos_view_scores = Vec::new();
    let mut neg_view_scores = Vec::new();
    let mut voi_scores: Vec<(Vec<f64>, bool)> = Vec::new();
    let mut survivors = Vec::new();
    let mut fold_rows = Vec::new();
    let mut scoring_seconds = 0.0f64;
    let mut test_volumes = 0usize;

    for fold in folds {
        let tag = format!("fold{}", fold.fold);
        // C1: train on training-fold views
        let (train_x, train_labels, d) =
            descriptor_matrix(ds, &fold.train_candidates, &view_cfg, &hog_cfg)?;
        let svm_cfg = SvmConfig {
            c: cfg.svm.c,
            tolerance: cfg.svm.tolerance,
            max_epochs: cfg.svm.max_epochs,
            seed: derive_seed_str(features_seed, &format!("{tag}:svm")),
            bias: cfg.svm.bias,
        };
        let fit = train_svm(&train_x, &train_labels, d, &svm_cfg)
            .map_err(|e| CliError::Data(format!("svm training [{tag}]: {e}")))?;

        let probs_of = |matrix: &[f64], n_rows: usize| -> Result<Vec<f64>, CliError> {
            (0..n_rows)
                .map(|i| {
                    score_view(&fit.model, &matrix[i * d..(i + 1) * d])
                        .map(sigmoid)
                        .map_err(|e| CliError::Data(format!("scoring [{tag}]: {e}")))
                })
                .collect()
        };
        let train_probs = probs_of(&train_x, train_labels.len())?;
        drop(train_x);

        // C2: sparse fusion on training-fold score vectors
        let fusion_cfg = FusionConfig {
            prior_init: cfg.fusion.prior_init,
            ..FusionConfig::default()
        };
        let train_vectors: Vec<ScoreVector<f64>> = train_probs
            .chunks(per_cand)
            .map(|c| ScoreVector::new(c.to_vec()).expect("probabilities in range"))
            .collect();
        let fusion_data: Vec<(ScoreVector<f64>, bool)> = train_vectors
            .iter()
            .cloned()
            .zip(fold.train_candidates.iter().map(Candidate::is_positive))
            .collect();
        let sparse_model = fusion::train_fusion(&fusion_data, &fusion_cfg)
            .map_err(|e| CliError::Convergence(format!("fusion training [{tag}]: {e}")))?;
        survivors.push(sparse_model.survivors());

        // score the held-out side (timed: this is the per-volume cost a new
        // case pays after candidate generation)
        let start = Instant::now();
        let (test_x, test_labels, _) =
            descriptor_matrix(ds, &fold.test_candidates, &view_cfg, &hog_cfg)?;
        let test_probs = probs_of(&test_x, test_labels.len())?;
        drop(test_x);
        let test_vectors: Vec<ScoreVector<f64>> = test_probs
            .chunks(per_cand)
            .map(|c| ScoreVector::new(c.to_vec()).expect("probabilities in range"))
            .collect();
        let fused = fuse_all_modes(&test_vectors, &sparse_model)?;
        scoring_seconds += start.elapsed().as_secs_f64();
        test_volumes += fold.test_idx.len();

        // training-side fused scores for the training FROC; the same
        // patient appears in several training folds, so keys are
        // fold-scoped to keep per-fold object identities distinct
        let train_fused = fuse_all_modes(&train_vectors, &sparse_model)?;
        for (ci, cand) in fold.train_candidates.iter().enumerate() {
            for (mode, scores) in [
                ("sparse", &train_fused.sparse),
                ("max", &train_fused.max),
                ("mean", &train_fused.mean),
            ] {
                train_inputs.get_mut(mode).unwrap().push(FrocInput {
                    patient: format!("f{}:{}", fold.fold, cand.patient_id),
                    gt_object_id: cand.gt_object_id,
                    label: cand.label,
                    score: scores[ci],
                });
            }
        }

        let mut rows = Vec::with_capacity(fold.test_candidates.len());
        for (ci, cand) in fold.test_candidates.iter().enumerate() {
            for (mode, scores) in [
                ("sparse", &fused.sparse),
                ("max", &fused.max),
                ("mean", &fused.mean),
            ] {
                val_inputs.get_mut(mode).unwrap().push(FrocInput {
                    patient: cand.patient_id.clone(),
                    gt_object_id: cand.gt_object_id,
                    label: cand.label,
                    score: scores[ci],
                });
            }
            rows.push(TestScoreRow {
                candidate: cand.clone(),
                p_sparse: fused.sparse[ci],
                p_max: fused.max[ci],
                p_mean: fused.mean[ci],
            });
        }
        fold_rows.push(rows);

        for (i, &label) in test_labels.iter().enumerate() {
            if label > 0 {
                pos_view_scores.push(test_probs[i]);
            } else {
                neg_view_scores.push(test_probs[i]);
            }
        }
        for (ci, cand) in fold.test_candidates.iter().enumerate() {
            voi_scores.push((
                test_probs[ci * per_cand..(ci + 1) * per_cand].to_vec(),
                cand.is_positive(),
            ));
        }
    }

    // pooled curves and statistics
    let n_patients = ds.patients.len();
    let n_objects = ds.total_objects();
    let mut val_curves = BTreeMap::new();
    let mut train_curves = BTreeMap::new();
    let train_volumes: usize = folds.iter().map(|f| f.train_idx.len()).sum();
    let train_objects: usize = folds
        .iter()
        .map(|f| f.train_idx.iter().map(|&i| ds.patients[i].n_objects).sum::<usize>())
        .sum();
    for mode in FusionMode::ALL {
        let name = mode.name();
        val_curves.insert(
            name,
            froc(&val_inputs[name], n_patients, n_objects)
                .map_err(|e| CliError::Data(format!("froc [{name}]: {e}")))?,
        );
        train_curves.insert(
            name,
            froc(&train_inputs[name], train_volumes, train_objects)
                .map_err(|e| CliError::Data(format!("training froc [{name}]: {e}")))?,
        );
    }

    let ks = ks_test(&pos_view_scores, &neg_view_scores)
        .map_err(|e| CliError::Data(format!("ks test: {e}")))?;
    let stats = slice_stats(&voi_scores, 0.5)
        .map_err(|e| CliError::Data(format!("slice stats: {e}")))?;

    let test_total: usize = folds.iter().map(|f| f.test_candidates.len()).sum();
    let test_positive: usize = folds
        .iter()
        .flat_map(|f| &f.test_candidates)
        .filter(|c| c.is_positive())
        .count();
    let report = CvReport {
        version: REPORT_VERSION,
        seed: features_seed,
        folds: folds.len(),
        hog_cells: cells_per_side,
        views_per_candidate: per_cand,
        n_patients,
        n_objects,
        calibration: folds
            .iter()
            .map(|f| CalibrationSummary {
                fold: f.fold,
                threshold: f.calibration.threshold,
                object_sensitivity: f.calibration.object_sensitivity,
                fp_per_case: f.calibration.fp_per_case,
            })
            .collect(),
        candidate_counts: CandidateCounts {
            train_total: folds.iter().map(|f| f.train_candidates.len()).sum(),
            test_total,
            test_positive,
            test_negative: test_total - test_positive,
        },
        slice_auc: stats.auc,
        ks,
        slice_stats: stats,
        fusion_survivors: survivors,
        validation: val_curves
            .iter()
            .map(|(k, v)| (k.to_string(), mode_metrics(v)))
            .collect(),
        training: train_curves
            .iter()
            .map(|(k, v)| (k.to_string(), mode_metrics(v)))
            .collect(),
    };

    Ok(CvOutcome {
        report,
        val_curves,
        train_curves,
        pos_view_scores,
        neg_view_scores,
        scoring_seconds_per_volume: scoring_seconds / test_volumes.max(1) as f64,
        fold_rows,
    })
}

/// Full cross-validation run with on-disk artifacts. Returns the outcome
/// of the configured HOG resolution.
pub fn run_cv(
    ds: &LoadedDataset,
    cfg: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
    frozen_candgen: Option<&Path>,
    emit_final: bool,
) -> Result<CvOutcome, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("mkdir: {e}")))?;
    let features = compute_features(ds)?;
    let split = split_patients(&ds.ids(), cfg.eval.folds, derive_seed_str(seed, "folds"))
        .map_err(|e| CliError::Data(format!("fold split: {e}")))?;

    let frozen = match frozen_candgen {
        Some(dir) => Some(load_candgen_model(dir)?),
        None => None,
    };
    let folds = build_fold_data(ds, &features, &split, cfg, seed, frozen.as_ref())?;
    let outcome = classify_and_fuse(ds, seed, &folds, cfg, cfg.hog.cells_per_side)?;

    // artifacts
    write_json(&out_dir.join("cv_summary.json"), &outcome.report)?;
    for mode in FusionMode::ALL {
        let name = mode.name();
        eval::write_froc_csv(&outcome.val_curves[name], &out_dir.join(format!("froc_val_{name}.csv")))
            .map_err(|e| CliError::Data(format!("write froc: {e}")))?;
        eval::write_froc_csv(
            &outcome.train_curves[name],
            &out_dir.join(format!("froc_train_{name}.csv")),
        )
        .map_err(|e| CliError::Data(format!("write froc: {e}")))?;
    }
    for (fold, rows) in folds.iter().zip(&outcome.fold_rows) {
        let dir = out_dir.join(format!("folds/fold{}", fold.fold));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("mkdir: {e}")))?;
        write_test_scores(&dir.join("test_scores.csv"), rows)?;
        write_json(
            &dir.join("calibration.json"),
            &CalibrationSummary {
                fold: fold.fold,
                threshold: fold.calibration.threshold,
                object_sensitivity: fold.calibration.object_sensitivity,
                fp_per_case: fold.calibration.fp_per_case,
            },
        )?;
    }

    if emit_final {
        let all_idx: Vec<usize> = (0..ds.patients.len()).collect();
        let final_candgen = match &frozen {
            Some(m) => CandgenModel {
                forest: m.forest.clone(),
                threshold: m.threshold,
                calibration: m.calibration.clone(),
            },
            None => train_candgen(ds, &features, &all_idx, cfg, seed, "final")?,
        };
        emit_final_models(ds, &features, &final_candgen, cfg, seed, &out_dir.join("models/final"))?;
    }
    Ok(outcome)
}

/// Trains C1 and C2 on the whole dataset and writes the model directory
/// consumed by the detect command.
fn emit_final_models(
    ds: &LoadedDataset,
    features: &[GridFeatures],
    candgen_model: &CandgenModel,
    cfg: &PipelineConfig,
    seed: u64,
    dir: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("mkdir: {e}")))?;
    let view_cfg = ViewSamplerConfig { k: cfg.views.k, window: 45 };
    let per_cand = view_cfg.views_per_candidate();
    let mut hog_cfg = HogConfig::new(cfg.hog.cells_per_side)
        .map_err(|e| CliError::Usage(format!("hog config: {e}")))?;
    hog_cfg.clamp = cfg.hog.clamp;

    let mut candidates = Vec::new();
    for pi in 0..ds.patients.len() {
        candidates
            .extend(candidates_for(ds, features, pi, &candgen_model.forest, candgen_model.threshold)?.candidates);
    }
    let (x, labels, d) = descriptor_matrix(ds, &candidates, &view_cfg, &hog_cfg)?;
    let svm_cfg = SvmConfig {
        c: cfg.svm.c,
        tolerance: cfg.svm.tolerance,
        max_epochs: cfg.svm.max_epochs,
        seed: derive_seed_str(seed, "final:svm"),
        bias: cfg.svm.bias,
    };
    let fit = train_svm(&x, &labels, d, &svm_cfg)
        .map_err(|e| CliError::Data(format!("svm training [final]: {e}")))?;
    let probs: Vec<f64> = (0..labels.len())
        .map(|i| {
            score_view(&fit.model, &x[i * d..(i + 1) * d])
                .map(sigmoid)
                .map_err(|e| CliError::Data(format!("scoring [final]: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let fusion_data: Vec<(ScoreVector<f64>, bool)> = probs
        .chunks(per_cand)
        .map(|c| ScoreVector::new(c.to_vec()).expect("probabilities in range"))
        .zip(candidates.iter().map(Candidate::is_positive))
        .collect();
    let fusion_cfg = FusionConfig { prior_init: cfg.fusion.prior_init, ..FusionConfig::default() };
    let sparse_model = fusion::train_fusion(&fusion_data, &fusion_cfg)
        .map_err(|e| CliError::Convergence(format!("fusion training [final]: {e}")))?;

    write_text(&dir.join("forest.json"), &candgen_model.forest.to_json())?;
    write_text(&dir.join("svm.json"), &fit.model.to_json())?;
    write_text(&dir.join("fusion.json"), &sparse_model.to_json())?;
    write_json(
        &dir.join("meta.json"),
        &DetectMeta {
            version: REPORT_VERSION,
            hog_cells: cfg.hog.cells_per_side,
            view_k: cfg.views.k,
            threshold: candgen_model.threshold,
            fusion_mode: cfg.fusion.mode,
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectMeta {
    pub version: u32,
    pub hog_cells: usize,
    pub view_k: usize,
    pub threshold: f64,
    pub fusion_mode: FusionMode,
}

fn load_candgen_model(dir: &Path) -> Result<CandgenModel, CliError> {
    let forest_text = std::fs::read_to_string(dir.join("forest.json"))
        .map_err(|e| CliError::Data(format!("read forest model: {e}")))?;
    let forest = Forest::from_json(&forest_text)
        .map_err(|e| CliError::Data(format!("parse forest model: {e}")))?;
    let cal_text = std::fs::read_to_string(dir.join("calibration.json"))
        .map_err(|e| CliError::Data(format!("read calibration: {e}")))?;
    let calibration: Calibration = serde_json::from_str(&cal_text)
        .map_err(|e| CliError::Data(format!("parse calibration: {e}")))?;
    Ok(CandgenModel { threshold: calibration.threshold, forest, calibration })
}

// ---------------------------------------------------------------------------
// candgen command
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandgenReport {
    pub version: u32,
    pub seed: u64,
    pub threshold: f64,
    pub object_sensitivity: f64,
    pub fp_per_case: f64,
    pub n_patients: usize,
    pub n_objects: usize,
    pub candidates_total: usize,
}

/// Trains candidate generation on the whole dataset, calibrates, and emits
/// per-patient candidate CSVs plus the model and a report.
pub fn run_candgen(
    ds: &LoadedDataset,
    cfg: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
    frozen_candgen: Option<&Path>,
) -> Result<CandgenReport, CliError> {
    std::fs::create_dir_all(out_dir.join("candidates"))
        .map_err(|e| CliError::Data(format!("mkdir: {e}")))?;
    std::fs::create_dir_all(out_dir.join("models"))
        .map_err(|e| CliError::Data(format!("mkdir: {e}")))?;
    let features = compute_features(ds)?;
    let all_idx: Vec<usize> = (0..ds.patients.len()).collect();
    let model = match frozen_candgen {
        Some(dir) => load_candgen_model(dir)?,
        None => train_candgen(ds, &features, &all_idx, cfg, seed, "candgen")?,
    };

    let mut total = 0usize;
    for pi in 0..ds.patients.len() {
        let cs = candidates_for(ds, &features, pi, &model.forest, model.threshold)?;
        total += cs.candidates.len();
        candgen::write_candidates_csv(
            &cs,
            &out_dir.join(format!("candidates/{}.csv", ds.patients[pi].id)),
        )
        .map_err(|e| CliError::Data(format!("write candidates: {e}")))?;
    }

    write_text(&out_dir.join("models/forest.json"), &model.forest.to_json())?;
    write_json(&out_dir.join("models/calibration.json"), &model.calibration)?;
    let report = CandgenReport {
        version: REPORT_VERSION,
        seed,
        threshold: model.threshold,
        object_sensitivity: model.calibration.object_sensitivity,
        fp_per_case: model.calibration.fp_per_case,
        n_patients: ds.patients.len(),
        n_objects: ds.total_objects(),
        candidates_total: total,
    };
    write_json(&out_dir.join("candgen_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// detect command
// ---------------------------------------------------------------------------

/// Runs the complete chain on one volume and writes `x,y,z,probability`
/// rows sorted by descending probability.
pub fn run_detect(models_dir: &Path, volume_path: &Path, out_csv: &Path) -> Result<usize, CliError> {
    let meta_text = std::fs::read_to_string(models_dir.join("meta.json"))
        .map_err(|e| CliError::Data(format!("read meta.json: {e}")))?;
    let meta: DetectMeta = serde_json::from_str(&meta_text)
        .map_err(|e| CliError::Data(format!("parse meta.json: {e}")))?;
    if meta.version != REPORT_VERSION {
        return Err(CliError::Data(format!(
            "model version {} unsupported (expected {})",
            meta.version, REPORT_VERSION
        )));
    }
    let forest_model = Forest::from_json(
        &std::fs::read_to_string(models_dir.join("forest.json"))
            .map_err(|e| CliError::Data(format!("read forest.json: {e}")))?,
    )
    .map_err(|e| CliError::Data(format!("parse forest.json: {e}")))?;
    let svm_model = SvmModel::from_json(
        &std::fs::read_to_string(models_dir.join("svm.json"))
            .map_err(|e| CliError::Data(format!("read svm.json: {e}")))?,
    )
    .map_err(|e| CliError::Data(format!("parse svm.json: {e}")))?;
    let fusion_model = FusionWeights::from_json(
        &std::fs::read_to_string(models_dir.join("fusion.json"))
            .map_err(|e| CliError::Data(format!("read fusion.json: {e}")))?,
    )
    .map_err(|e| CliError::Data(format!("parse fusion.json: {e}")))?;

    let image: ImageVolume = load_volume(volume_path)
        .map_err(|e| CliError::Data(format!("load {}: {e}", volume_path.display())))?;
    let field = extract_grid_features(&image)
        .map_err(|e| CliError::Data(format!("features: {e}")))?;
    let probmap = forest::predict_probmap(&forest_model, &field)
        .map_err(|e| CliError::Data(format!("probmap: {e}")))?;
    let centroids = candgen::generate_candidates(&probmap, meta.threshold as f32);

    let view_cfg = ViewSamplerConfig { k: meta.view_k, window: 45 };
    let hog_cfg =
        HogConfig::new(meta.hog_cells).map_err(|e| CliError::Data(format!("hog config: {e}")))?;
    let per_cand = view_cfg.views_per_candidate();
    let d = hog_cfg.descriptor_dim();
    if svm_model.feature_dim != d {
        return Err(CliError::Data(format!(
            "svm model dimension {} does not match descriptor dimension {d}",
            svm_model.feature_dim
        )));
    }

    let mut detections: Vec<(VoxelIndex, f64)> = Vec::with_capacity(centroids.len());
    for (ci, &centroid) in centroids.iter().enumerate() {
        let cand = Candidate {
            patient_id: "query".into(),
            centroid,
            label: -1,
            gt_object_id: 0,
            voi_half: candgen::VOI_HALF,
        };
        let views = sample_views(&image, &cand, ci, &view_cfg)
            .map_err(|e| CliError::Data(format!("views: {e}")))?;
        let mut probs = Vec::with_capacity(per_cand);
        for view in &views {
            let desc = encode_hog(&view.pixels, &hog_cfg)
                .map_err(|e| CliError::Data(format!("hog: {e}")))?;
            let row: Vec<f64> = desc.values.iter().map(|&v| f64::from(v)).collect();
            let score = score_view(&svm_model, &row)
                .map_err(|e| CliError::Data(format!("scoring: {e}")))?;
            probs.push(sigmoid(score));
        }
        let sv = ScoreVector::new(probs).expect("probabilities in range");
        let p = match meta.fusion_mode {
            FusionMode::Sparse => fusion::fuse(&fusion_model, &sv),
            FusionMode::Max => fusion::max_pool(&sv),
            FusionMode::Mean => fusion::mean_pool(&sv),
        }
        .map_err(|e| CliError::Data(format!("fusion: {e}")))?;
        detections.push((centroid, p));
    }
    detections.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite probabilities")
            .then_with(|| (a.0.x, a.0.y, a.0.z).cmp(&(b.0.x, b.0.y, b.0.z)))
    });

    let mut text = String::from("x,y,z,probability\n");
    for (c, p) in &detections {
        text.push_str(&format!("{},{},{},{}\n", c.x, c.y, c.z, p));
    }
    write_text(out_csv, &text)?;
    Ok(detections.len())
}

// ---------------------------------------------------------------------------
// diagnostic dumps
// ---------------------------------------------------------------------------

pub fn run_dump_views(
    volume_path: &Path,
    center: VoxelIndex,
    k: usize,
    out_path: &Path,
) -> Result<(), CliError> {
    let image: ImageVolume = load_volume(volume_path)
        .map_err(|e| CliError::Data(format!("load {}: {e}", volume_path.display())))?;
    let cand = Candidate {
        patient_id: "dump".into(),
        centroid: center,
        label: -1,
        gt_object_id: 0,
        voi_half: candgen::VOI_HALF,
    };
    let cfg = ViewSamplerConfig { k, window: 45 };
    let views =
        sample_views(&image, &cand, 0, &cfg).map_err(|e| CliError::Data(format!("views: {e}")))?;
    let tiled = montage(&views, &cfg).map_err(|e| CliError::Data(format!("montage: {e}")))?;
    save_volume(&tiled, out_path).map_err(|e| CliError::Data(format!("save: {e}")))
}

/// One descriptor CSV row per view: provenance columns then f1..fD.
pub fn run_dump_hog(
    volume_path: &Path,
    candidates_csv: &Path,
    cells_per_side: usize,
    k: usize,
    out_path: &Path,
) -> Result<usize, CliError> {
    let image: ImageVolume = load_volume(volume_path)
        .map_err(|e| CliError::Data(format!("load {}: {e}", volume_path.display())))?;
    let candidates = candgen::read_candidates_csv(candidates_csv)
        .map_err(|e| CliError::Data(format!("read candidates: {e}")))?;
    let hog_cfg = HogConfig::new(cells_per_side)
        .map_err(|e| CliError::Usage(format!("hog config: {e}")))?;
    let view_cfg = ViewSamplerConfig { k, window: 45 };

    let mut text = String::from("patient_id,candidate_idx,axis,offset,label");
    for i in 1..=hog_cfg.descriptor_dim() {
        text.push_str(&format!(",f{i}"));
    }
    text.push('\n');
    let mut rows = 0usize;
    for (ci, cand) in candidates.iter().enumerate() {
        let views = sample_views(&image, cand, ci, &view_cfg)
            .map_err(|e| CliError::Data(format!("views: {e}")))?;
        for view in &views {
            let desc = encode_hog(&view.pixels, &hog_cfg)
                .map_err(|e| CliError::Data(format!("hog: {e}")))?;
            text.push_str(&format!(
                "{},{},{},{},{}",
                cand.patient_id,
                ci,
                view.axis.letter(),
                view.offset,
                view.label
            ));
            for v in &desc.values {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
            rows += 1;
        }
    }
    write_text(out_path, &text)?;
    Ok(rows)
}

pub fn run_render_weights(
    model_path: &Path,
    cells_per_side: usize,
    out_path: &Path,
) -> Result<(), CliError> {
    let model = SvmModel::from_json(
        &std::fs::read_to_string(model_path)
            .map_err(|e| CliError::Data(format!("read model: {e}")))?,
    )
    .map_err(|e| CliError::Data(format!("parse model: {e}")))?;
    let hog_cfg = HogConfig::new(cells_per_side)
        .map_err(|e| CliError::Usage(format!("hog config: {e}")))?;
    let weights: Vec<f32> = model.omega.iter().map(|&w| w as f32).collect();
    let glyph = vagg_core::hog::render_weights(&weights[..hog_cfg.descriptor_dim().min(weights.len())], &hog_cfg)
        .map_err(|e| CliError::Data(format!("render: {e}")))?;
    save_volume(&glyph, out_path).map_err(|e| CliError::Data(format!("save: {e}")))
}

// ---------------------------------------------------------------------------
// small helpers
// ---------------------------------------------------------------------------

fn write_test_scores(path: &Path, rows: &[TestScoreRow]) -> Result<(), CliError> {
    let mut text = String::from("patient_id,x,y,z,label,gt_object_id,p_sparse,p_max,p_mean\n");
    for r in rows {
        let c = &r.candidate;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.patient_id,
            c.centroid.x,
            c.centroid.y,
            c.centroid.z,
            c.label,
            c.gt_object_id,
            r.p_sparse,
            r.p_max,
            r.p_mean
        ));
    }
    write_text(path, &text)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))
}
