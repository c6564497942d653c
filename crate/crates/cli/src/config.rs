//! Pipeline configuration: JSON file with defaults for every stage.
//! Command-line flags override individual fields after loading.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vagg_core::synth::PhantomSpec;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub candgen: CandgenSection,
    pub views: ViewsSection,
    pub hog: HogSection,
    pub svm: SvmSection,
    pub fusion: FusionSection,
    pub eval: EvalSection,
    pub phantom: PhantomSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            candgen: CandgenSection::default(),
            views: ViewsSection::default(),
            hog: HogSection::default(),
            svm: SvmSection::default(),
            fusion: FusionSection::default(),
            eval: EvalSection::default(),
            phantom: PhantomSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CandgenSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Negatives kept per positive voxel when assembling the training set.
    pub neg_pos_ratio: f64,
    /// Fixed probability threshold; when absent the threshold is
    /// calibrated for full object sensitivity on the training volumes.
    pub threshold: Option<f64>,
}

impl Default for CandgenSection {
    fn default() -> Self {
        Self { n_trees: 60, max_depth: 20, min_leaf: 5, neg_pos_ratio: 3.0, threshold: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ViewsSection {
    pub k: usize,
}

impl Default for ViewsSection {
    fn default() -> Self {
        Self { k: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HogSection {
    pub cells_per_side: usize,
    pub clamp: Option<(f64, f64)>,
}

impl Default for HogSection {
    fn default() -> Self {
        Self { cells_per_side: 5, clamp: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub bias: bool,
}

impl Default for SvmSection {
    fn default() -> Self {
        Self { c: 1.0, tolerance: 1e-3, max_epochs: 1000, bias: false }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Max,
    Mean,
    Sparse,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Sparse, FusionMode::Max, FusionMode::Mean];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Max => "max",
            FusionMode::Mean => "mean",
            FusionMode::Sparse => "sparse",
        }
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(FusionMode::Max),
            "mean" => Ok(FusionMode::Mean),
            "sparse" => Ok(FusionMode::Sparse),
            other => Err(format!("unknown fusion mode {other:?} (max|mean|sparse)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub mode: FusionMode,
    pub prior_init: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { mode: FusionMode::Sparse, prior_init: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub folds: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { folds: 6 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Loads the file when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_contract() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.candgen.n_trees, 60);
        assert_eq!(cfg.views.k, 4);
        assert_eq!(cfg.hog.cells_per_side, 5);
        assert_eq!(cfg.svm.c, 1.0);
        assert_eq!(cfg.fusion.mode, FusionMode::Sparse);
        assert_eq!(cfg.eval.folds, 6);
    }

    #[test]
    fn partial_json_overlays_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"hog": {"cells_per_side": 9}, "eval": {"folds": 3}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.hog.cells_per_side, 9);
        assert_eq!(cfg.eval.folds, 3);
        assert_eq!(cfg.svm.c, 1.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"nonsense": 1}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Usage(_))));
    }

    #[test]
    fn fusion_mode_parses() {
        assert_eq!("sparse".parse::<FusionMode>().unwrap(), FusionMode::Sparse);
        assert!("banana".parse::<FusionMode>().is_err());
    }
}
