//! Volumetric object detection by 2D view aggregation.
//!
//! The pipeline is staged: candidate generation on 3D volumes (voxel
//! features + random forest + grouping), 27 orthogonal 2D views per
//! candidate VOI, HOG + linear-SVM view scoring, and pooled or sparse
//! Bayesian fusion of the 27 view probabilities into one detection
//! probability per candidate, with FROC-based evaluation and a seeded
//! synthetic-phantom benchmark.
//!
//! All numeric kernels are generic over the scalar type via [`num::Real`];
//! the aliases below fix the concrete types the shipped pipeline and file
//! formats use.

pub mod candgen;
pub mod eval;
pub mod features3d;
pub mod forest;
pub mod fusion;
pub mod hog;
pub mod linsvm;
pub mod num;
pub mod synth;
pub mod views;
pub mod volume;

pub use num::{derive_seed, derive_seed_str, Real};
pub use volume::{load_volume, save_volume, Volume, VolumeError, VoxelIndex};

/// Scalar of on-disk image data and the feature-extraction path.
pub type Scalar = f32;
/// Scalar of the classifier training paths (SVM and fusion solvers).
pub type SolverScalar = f64;

/// 3D image volume as stored in VAGG-VOL `f32` payloads.
pub type ImageVolume = Volume<f32>;
/// Integer label mask; 0 is background.
pub type MaskVolume = Volume<u16>;
/// Probability map (grid- or full-resolution).
pub type ProbMap = Volume<f32>;

pub type GridFeatures = features3d::GridFeatureField<Scalar>;
pub type Forest = forest::ForestModel<Scalar>;
pub type ViewPatch = views::ViewSlice<Scalar>;
pub type HogFeatures = hog::HogDescriptor<Scalar>;
pub type SvmModel = linsvm::LinearModel<SolverScalar>;
pub type FusionWeights = fusion::FusionModel<SolverScalar>;
