//! Orthogonal 2D view sampling around candidate VOIs.
//!
//! For each axis the sampler takes 2k+1 slices at signed voxel offsets
//! through the border-clamped VOI center; with k = 4 that is 27 views per
//! candidate. Views inherit the candidate's label. Downstream classifiers
//! must treat views as independent instances; the provenance fields exist
//! only for grouping during evaluation.

use thiserror::Error;

use crate::candgen::Candidate;
use crate::num::Real;
use crate::volume::{Volume, VoxelIndex};

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("volume dims {dims:?} cannot hold a {window}x{window} in-plane window")]
    VolumeTooSmall { dims: [usize; 3], window: usize },
    #[error("montage needs at least one view")]
    EmptyMontage,
}

/// Slicing axis. In-plane orientations are fixed per axis:
/// sagittal (x fixed): columns = y, rows = z;
/// coronal (y fixed): columns = x, rows = z;
/// axial (z fixed): columns = x, rows = y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewAxis {
    Sagittal,
    Coronal,
    Axial,
}

impl ViewAxis {
    pub const ALL: [ViewAxis; 3] = [ViewAxis::Sagittal, ViewAxis::Coronal, ViewAxis::Axial];

    /// Coordinate index that is fixed by this axis (x=0, y=1, z=2).
    pub fn fixed_coordinate(self) -> usize {
        match self {
            ViewAxis::Sagittal => 0,
            ViewAxis::Coronal => 1,
            ViewAxis::Axial => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            ViewAxis::Sagittal => 'x',
            ViewAxis::Coronal => 'y',
            ViewAxis::Axial => 'z',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'x' => Some(ViewAxis::Sagittal),
            'y' => Some(ViewAxis::Coronal),
            'z' => Some(ViewAxis::Axial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViewSlice<S> {
    /// (patient id, candidate index) of the owning VOI.
    pub candidate_ref: (String, usize),
    pub axis: ViewAxis,
    pub offset: i32,
    /// window x window patch, row-major.
    pub pixels: Vec<S>,
    pub label: i8,
}

#[derive(Debug, Clone, Copy)]
pub struct ViewSamplerConfig {
    /// Offset radius along each axis; 2k+1 slices per axis.
    pub k: usize,
    pub window: usize,
}

impl Default for ViewSamplerConfig {
    fn default() -> Self {
        Self { k: 4, window: 45 }
    }
}

impl ViewSamplerConfig {
    pub fn views_per_candidate(&self) -> usize {
        3 * (2 * self.k + 1)
    }
}

/// Samples 3(2k+1) views in deterministic order: axis x, y, z major,
/// offset ascending minor. The in-plane window reuses the clamped VOI
/// center; only the through-plane coordinate moves with the offset.
pub fn sample_views<S: Real>(
    v: &Volume<S>,
    candidate: &Candidate,
    candidate_index: usize,
    cfg: &ViewSamplerConfig,
) -> Result<Vec<ViewSlice<S>>, ViewError> {
    let window = cfg.window;
    if v.dims().iter().any(|&d| d < window) {
        return Err(ViewError::VolumeTooSmall { dims: v.dims(), window });
    }
    let half = window / 2;
    let center = v.clamped_window_center(candidate.centroid, half);
    let k = cfg.k as i32;

    let mut views = Vec::with_capacity(cfg.views_per_candidate());
    for axis in ViewAxis::ALL {
        for offset in -k..=k {
            let fixed = offset_coordinate(
                [center.x, center.y, center.z][axis.fixed_coordinate()],
                offset,
                v.dims()[axis.fixed_coordinate()],
            );
            let pixels = slice_pixels(v, axis, fixed, center, half, window);
            views.push(ViewSlice {
                candidate_ref: (candidate.patient_id.clone(), candidate_index),
                axis,
                offset,
                pixels,
                label: candidate.label,
            });
        }
    }
    Ok(views)
}

fn offset_coordinate(center: usize, offset: i32, dim: usize) -> usize {
    let c = center as i64 + offset as i64;
    c.clamp(0, dim as i64 - 1) as usize
}

fn slice_pixels<S: Real>(
    v: &Volume<S>,
    axis: ViewAxis,
    fixed: usize,
    center: VoxelIndex,
    half: usize,
    window: usize,
) -> Vec<S> {
    let mut pixels = Vec::with_capacity(window * window);
    let (x0, y0, z0) = (center.x - half, center.y - half, center.z - half);
    match axis {
        ViewAxis::Sagittal => {
            for r in 0..window {
                for c in 0..window {
                    pixels.push(v.at(fixed, y0 + c, z0 + r));
                }
            }
        }
        ViewAxis::Coronal => {
            for r in 0..window {
                for c in 0..window {
                    pixels.push(v.at(x0 + c, fixed, z0 + r));
                }
            }
        }
        ViewAxis::Axial => {
            for r in 0..window {
                for c in 0..window {
                    pixels.push(v.at(x0 + c, y0 + r, fixed));
                }
            }
        }
    }
    pixels
}

/// Tiles one candidate's views into a single 2D volume: one row per axis
/// (axial on top, then coronal, then sagittal), offsets left to right.
pub fn montage<S: Real>(views: &[ViewSlice<S>], cfg: &ViewSamplerConfig) -> Result<Volume<S>, ViewError> {
    if views.is_empty() {
        return Err(ViewError::EmptyMontage);
    }
    let window = cfg.window;
    let per_axis = 2 * cfg.k + 1;
    let width = per_axis * window;
    let height = 3 * window;
    let mut data = vec![S::zero(); width * height];
    let row_of = |axis: ViewAxis| match axis {
        ViewAxis::Axial => 0usize,
        ViewAxis::Coronal => 1,
        ViewAxis::Sagittal => 2,
    };
    for view in views {
        let col = (view.offset + cfg.k as i32) as usize;
        let row = row_of(view.axis);
        for r in 0..window {
            for c in 0..window {
                data[(row * window + r) * width + col * window + c] = view.pixels[r * window + c];
            }
        }
    }
    Ok(Volume::new([width, height, 1], [1.0, 1.0, 1.0], data).expect("montage dims"))
}
