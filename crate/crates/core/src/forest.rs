//! Random forest over the 28-dim grid-voxel features, the probability-map
//! classifier behind candidate generation.
//!
//! Trees are grown on bootstrap samples with Gini-impurity splits over a
//! random feature subset per split. Training is deterministic given the
//! seed: per-tree RNGs are derived up front, so parallel tree training
//! matches serial execution bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candgen;
use crate::features3d::GridFeatureField;
use crate::num::{derive_seed, Real};
use crate::volume::Volume;

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data is empty")]
    EmptyInput,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("feature count mismatch: model has {model}, input has {input}")]
    FeatureCountMismatch { model: usize, input: usize },
    #[error("n_trees must be at least 1")]
    NoTrees,
    #[error(
        "sensitivity target unattainable: best object sensitivity {best:.4} \
         (missed {missed} of {total} objects at every swept threshold)"
    )]
    UnattainableSensitivity { best: f64, missed: usize, total: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 60, max_depth: 20, min_leaf: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum Node<S> {
    Split { feature: u16, threshold: S, left: u32, right: u32 },
    Leaf { positive_fraction: S },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecisionTree<S> {
    pub nodes: Vec<Node<S>>,
}

impl<S: Real> DecisionTree<S> {
    pub fn predict(&self, features: &[S]) -> S {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { positive_fraction } => return *positive_fraction,
                Node::Split { feature, threshold, left, right } => {
                    at = if features[*feature as usize] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForestModel<S> {
    pub version: u32,
    pub config: ForestConfig,
    pub feature_count: usize,
    pub trees: Vec<DecisionTree<S>>,
    /// Probability threshold chosen by calibration; None until calibrated.
    pub operating_threshold: Option<S>,
}

impl<S: Real + Serialize> ForestModel<S> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }
}

impl<S: Real + for<'de> Deserialize<'de>> ForestModel<S> {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Trains a forest on flat row-major samples (`labels.len()` rows of
/// `n_features` values). Each tree sees a same-size bootstrap resample and
/// floor(sqrt(n_features)) random candidate features per split.
pub fn train_forest<S: Real>(
    x: &[S],
    labels: &[bool],
    n_features: usize,
    config: &ForestConfig,
) -> Result<ForestModel<S>, ForestError> {
    let n = labels.len();
    if n == 0 {
        return Err(ForestError::EmptyInput);
    }
    assert_eq!(x.len(), n * n_features, "flat feature matrix shape");
    if config.n_trees == 0 {
        return Err(ForestError::NoTrees);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == n {
        return Err(ForestError::SingleClass);
    }

    let mtry = (n_features as f64).sqrt().floor().max(1.0) as usize;
    let seeds: Vec<u64> = (0..config.n_trees)
        .map(|t| derive_seed(config.seed, t as u64))
        .collect();
    let trees: Vec<DecisionTree<S>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
            let mut builder = TreeBuilder {
                x,
                labels,
                n_features,
                mtry,
                max_depth: config.max_depth,
                min_leaf: config.min_leaf.max(1),
                rng,
                nodes: Vec::new(),
            };
            builder.grow(sample, 0);
            DecisionTree { nodes: builder.nodes }
        })
        .collect();

    Ok(ForestModel {
        version: FOREST_FORMAT_VERSION,
        config: config.clone(),
        feature_count: n_features,
        trees,
        operating_threshold: None,
    })
}

struct TreeBuilder<'a, S> {
    x: &'a [S],
    labels: &'a [bool],
    n_features: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node<S>>,
}

impl<S: Real> TreeBuilder<'_, S> {
    #[inline]
    fn feature(&self, row: u32, f: usize) -> S {
        self.x[row as usize * self.n_features + f]
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let n = rows.len();
        let n_pos = rows.iter().filter(|&&r| self.labels[r as usize]).count();
        let pure = n_pos == 0 || n_pos == n;
        if pure || depth >= self.max_depth || n < 2 * self.min_leaf {
            self.nodes.push(leaf(n_pos, n));
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            self.nodes.push(leaf(n_pos, n));
            return id;
        };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| self.feature(r, feature) < threshold);

        self.nodes.push(Node::Split {
            feature: feature as u16,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id as usize] {
            *l = left;
            *r = right;
        }
        id
    }

    /// Best Gini split over `mtry` sampled features; thresholds are the
    /// midpoints between consecutive distinct sorted values. Ties keep the
    /// first candidate encountered, which is deterministic given the RNG.
    fn best_split(&mut self, rows: &[u32]) -> Option<(usize, S)> {
        let mut feature_ids: Vec<usize> = (0..self.n_features).collect();
        feature_ids.shuffle(&mut self.rng);
        feature_ids.truncate(self.mtry);

        let n = rows.len();
        let total_pos = rows.iter().filter(|&&r| self.labels[r as usize]).count();
        let mut best: Option<(f64, usize, S)> = None;
        let mut column: Vec<(S, bool)> = Vec::with_capacity(n);

        for &f in &feature_ids {
            column.clear();
            column.extend(rows.iter().map(|&r| (self.feature(r, f), self.labels[r as usize])));
            column.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

            let mut pos_left = 0usize;
            for i in 0..n - 1 {
                if column[i].1 {
                    pos_left += 1;
                }
                if !(column[i].0 < column[i + 1].0) {
                    continue;
                }
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let pos_right = total_pos - pos_left;
                let cost = gini_cost(pos_left, n_left) + gini_cost(pos_right, n_right);
                if best.map_or(true, |(b, _, _)| cost < b) {
                    let two = S::real(2.0);
                    let threshold = (column[i].0 + column[i + 1].0) / two;
                    // guard against midpoint rounding onto the left value
                    let threshold = if threshold > column[i].0 { threshold } else { column[i + 1].0 };
                    best = Some((cost, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn leaf<S: Real>(n_pos: usize, n: usize) -> Node<S> {
    Node::Leaf { positive_fraction: S::real(n_pos as f64 / n as f64) }
}

/// Count-weighted Gini impurity contribution of one side.
fn gini_cost(pos: usize, n: usize) -> f64 {
    let p = pos as f64 / n as f64;
    n as f64 * 2.0 * p * (1.0 - p)
}

/// Mean of per-tree leaf fractions.
pub fn predict<S: Real>(model: &ForestModel<S>, features: &[S]) -> S {
    let sum = model
        .trees
        .iter()
        .fold(S::zero(), |acc, t| acc + t.predict(features));
    sum / S::real(model.trees.len() as f64)
}

/// Grid-resolution probability map for a feature field.
pub fn predict_probmap<S: Real>(
    model: &ForestModel<S>,
    field: &GridFeatureField<S>,
) -> Result<Volume<S>, ForestError> {
    if field.features_per_voxel != model.feature_count {
        return Err(ForestError::FeatureCountMismatch {
            model: model.feature_count,
            input: field.features_per_voxel,
        });
    }
    let n = field.n_grid_voxels();
    let data: Vec<S> = (0..n)
        .into_par_iter()
        .map(|gi| predict(model, field.vector(gi)))
        .collect();
    Ok(Volume::new(field.grid_dims, field.grid_spacing(), data).expect("grid dims"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub object_sensitivity: f64,
    pub fp_per_case: f64,
}

/// Picks the largest probability threshold at which candidate generation
/// still claims every ground-truth object of the validation volumes.
///
/// Candidate thresholds are the per-object probability maxima (the binding
/// constraints for full sensitivity) plus a coarse grid; each is evaluated
/// through the actual grouping/labeling path. Errors when no swept
/// threshold reaches full sensitivity.
pub fn calibrate_threshold<S: Real>(
    model: &ForestModel<S>,
    validation: &[(&GridFeatureField<S>, &Volume<u16>)],
) -> Result<Calibration, ForestError> {
    let probmaps: Vec<Volume<S>> = validation
        .iter()
        .map(|(field, _)| predict_probmap(model, field))
        .collect::<Result<_, _>>()?;

    let mut total_objects = 0usize;
    let mut sweep: Vec<f64> = Vec::new();
    for ((field, mask), probmap) in validation.iter().zip(&probmaps) {
        let mut per_object_max: std::collections::BTreeMap<u16, f64> = Default::default();
        for gz in 0..field.grid_dims[2] {
            for gy in 0..field.grid_dims[1] {
                for gx in 0..field.grid_dims[0] {
                    let [x, y, z] = field.source_voxel(gx, gy, gz);
                    let label = mask.at(x, y, z);
                    if label > 0 {
                        let p = probmap.at(gx, gy, gz).as_f64();
                        let e = per_object_max.entry(label).or_insert(f64::MIN);
                        if p > *e {
                            *e = p;
                        }
                    }
                }
            }
        }
        total_objects += count_objects(mask);
        sweep.extend(per_object_max.values());
    }
    for i in 0..=16 {
        sweep.push(i as f64 / 16.0);
    }
    sweep.retain(|t| t.is_finite());
    sweep.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sweep.dedup();

    let n_volumes = validation.len() as f64;
    let mut best_sens = 0.0f64;
    for &t in &sweep {
        let mut hit = 0usize;
        let mut fp = 0usize;
        for ((_, mask), probmap) in validation.iter().zip(&probmaps) {
            let centroids = candgen::generate_candidates(probmap, S::real(t));
            let mut claimed = std::collections::BTreeSet::new();
            for c in &centroids {
                let label = mask.get(*c);
                if label > 0 {
                    claimed.insert(label);
                } else {
                    fp += 1;
                }
            }
            hit += claimed.len();
        }
        let sens = if total_objects == 0 { 1.0 } else { hit as f64 / total_objects as f64 };
        best_sens = best_sens.max(sens);
        if sens >= 1.0 {
            return Ok(Calibration {
                threshold: t,
                object_sensitivity: sens,
                fp_per_case: fp as f64 / n_volumes,
            });
        }
    }
    Err(ForestError::UnattainableSensitivity {
        best: best_sens,
        missed: total_objects - (best_sens * total_objects as f64).round() as usize,
        total: total_objects,
    })
}

fn count_objects(mask: &Volume<u16>) -> usize {
    let mut ids = std::collections::BTreeSet::new();
    for &v in mask.data() {
        if v > 0 {
            ids.insert(v);
        }
    }
    ids.len()
}

/// Keeps all positives and a seeded draw of `ratio` negatives per positive.
/// Returns the selected row indices in ascending order.
pub fn subsample_negatives(labels: &[bool], ratio: f64, seed: u64) -> Vec<usize> {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let keep = ((positives.len() as f64 * ratio).round() as usize).min(negatives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    negatives.shuffle(&mut rng);
    negatives.truncate(keep);
    let mut rows = positives;
    rows.extend(negatives);
    rows.sort_unstable();
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features3d::extract_grid_features;

    fn two_clusters(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let pos = i % 2 == 0;
            let center = if pos { 2.0 } else { -2.0 };
            x.push(center + rng.gen_range(-1.0..1.0));
            x.push(center + rng.gen_range(-1.0..1.0));
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_reach_training_accuracy() {
        let (x, y) = two_clusters(200, 11);
        let cfg = ForestConfig { n_trees: 50, seed: 3, ..Default::default() };
        let model = train_forest(&x, &y, 2, &cfg).unwrap();
        let correct = y
            .iter()
            .enumerate()
            .filter(|(i, &label)| (predict(&model, &x[i * 2..i * 2 + 2]) >= 0.5) == label)
            .count();
        assert!(correct as f64 / y.len() as f64 >= 0.95);
    }

    #[test]
    fn conflicting_duplicates_yield_interior_probability() {
        // the same point in both classes: no split separates them
        let x = vec![1.0f64, 1.0, 1.0, 1.0];
        let y = vec![true, false];
        let cfg = ForestConfig { n_trees: 10, seed: 1, ..Default::default() };
        let model = train_forest(&x, &y, 2, &cfg).unwrap();
        let p = predict(&model, &[1.0, 1.0]);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (x, y) = two_clusters(120, 5);
        let cfg = ForestConfig { n_trees: 20, seed: 42, ..Default::default() };
        let a = train_forest(&x, &y, 2, &cfg).unwrap();
        let b = train_forest(&x, &y, 2, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn single_class_and_empty_inputs_error() {
        assert!(matches!(
            train_forest::<f64>(&[], &[], 2, &ForestConfig::default()),
            Err(ForestError::EmptyInput)
        ));
        assert!(matches!(
            train_forest(&[0.0, 0.0, 1.0, 1.0], &[true, true], 2, &ForestConfig::default()),
            Err(ForestError::SingleClass)
        ));
    }

    #[test]
    fn prediction_is_mean_of_tree_leaves() {
        let (x, y) = two_clusters(80, 9);
        let cfg = ForestConfig { n_trees: 7, seed: 13, ..Default::default() };
        let model = train_forest(&x, &y, 2, &cfg).unwrap();
        let probe = [0.3, -0.2];
        let by_hand: f64 =
            model.trees.iter().map(|t| t.predict(&probe)).sum::<f64>() / model.trees.len() as f64;
        assert_eq!(predict(&model, &probe), by_hand);
    }

    #[test]
    fn prediction_invariant_to_tree_order() {
        let (x, y) = two_clusters(80, 21);
        let cfg = ForestConfig { n_trees: 9, seed: 2, ..Default::default() };
        let mut model = train_forest(&x, &y, 2, &cfg).unwrap();
        let probe = [0.7, 0.1];
        let before = predict(&model, &probe);
        model.trees.reverse();
        let after = predict(&model, &probe);
        assert!((before - after).abs() < 1e-12);
    }

    fn stump_model(threshold: f64, low: f64, high: f64) -> ForestModel<f64> {
        ForestModel {
            version: FOREST_FORMAT_VERSION,
            config: ForestConfig { n_trees: 1, ..Default::default() },
            feature_count: 28,
            trees: vec![DecisionTree {
                nodes: vec![
                    Node::Split { feature: 0, threshold, left: 1, right: 2 },
                    Node::Leaf { positive_fraction: low },
                    Node::Leaf { positive_fraction: high },
                ],
            }],
            operating_threshold: None,
        }
    }

    #[test]
    fn stump_probmap_follows_single_comparison() {
        let v = Volume::from_fn([30, 30, 30], [1.0; 3], |x, _, _| x as f64);
        let field = extract_grid_features(&v).unwrap();
        let model = stump_model(14.0, 0.1, 0.9);
        let probmap = predict_probmap(&model, &field).unwrap();
        assert_eq!(probmap.dims(), [10, 10, 10]);
        // grid voxel gx samples intensity at x = 3*gx
        assert_eq!(probmap.at(2, 4, 4), 0.1); // intensity 6 < 14
        assert_eq!(probmap.at(6, 4, 4), 0.9); // intensity 18 >= 14
    }

    #[test]
    fn constant_leaves_give_constant_map() {
        let v = Volume::filled([27, 27, 27], [1.0; 3], 0.0f64);
        let field = extract_grid_features(&v).unwrap();
        let model = ForestModel {
            version: FOREST_FORMAT_VERSION,
            config: ForestConfig::default(),
            feature_count: 28,
            trees: vec![
                DecisionTree { nodes: vec![Node::Leaf { positive_fraction: 0.7 }] };
                3
            ],
            operating_threshold: None,
        };
        let probmap = predict_probmap(&model, &field).unwrap();
        assert!(probmap.data().iter().all(|&p| (p - 0.7).abs() < 1e-12));
    }

    #[test]
    fn feature_count_mismatch_detected() {
        let v = Volume::filled([27, 27, 27], [1.0; 3], 0.0f64);
        let field = extract_grid_features(&v).unwrap();
        let model = ForestModel::<f64> {
            version: FOREST_FORMAT_VERSION,
            config: ForestConfig::default(),
            feature_count: 5,
            trees: vec![DecisionTree { nodes: vec![Node::Leaf { positive_fraction: 0.5 }] }],
            operating_threshold: None,
        };
        assert!(matches!(
            predict_probmap(&model, &field),
            Err(ForestError::FeatureCountMismatch { .. })
        ));
    }

    #[test]
    fn subsample_negatives_is_seeded_and_ratio_bound() {
        let labels: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let a = subsample_negatives(&labels, 3.0, 7);
        let b = subsample_negatives(&labels, 3.0, 7);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|&&i| labels[i]).count(), 10);
        assert_eq!(a.iter().filter(|&&i| !labels[i]).count(), 30);
    }

    #[test]
    fn json_roundtrip() {
        let (x, y) = two_clusters(60, 1);
        let cfg = ForestConfig { n_trees: 4, seed: 8, ..Default::default() };
        let model = train_forest(&x, &y, 2, &cfg).unwrap();
        let back = ForestModel::<f64>::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
    }
}
