//! Histogram-of-oriented-gradients encoding of 45x45 views.
//!
//! Per cell the descriptor carries 31 features: 18 contrast-sensitive
//! orientation bins, 9 contrast-insensitive bins, and 4 gradient-energy
//! features, one per block normalizer. The window divides into n x n cells
//! with n in {3, 5, 9}, giving descriptor lengths 279, 775 and 2511.
//!
//! Gradients come from centered differences with replicated borders, so
//! the encoding is exactly invariant to intensity shifts; block
//! normalization with truncation bounds every histogram feature by 0.4 and
//! every energy feature by 0.2357 * 18 * 0.2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::volume::Volume;

pub const SIGNED_BINS: usize = 18;
pub const UNSIGNED_BINS: usize = 9;
pub const FEATURES_PER_CELL: usize = SIGNED_BINS + UNSIGNED_BINS + 4;
/// 1/sqrt(18), the energy feature coefficient.
pub const ENERGY_COEFF: f64 = 0.2357;

#[derive(Debug, Error)]
pub enum HogError {
    #[error("cells_per_side must be one of 3, 5, 9; got {0}")]
    InvalidCells(usize),
    #[error("patch has {got} pixels, expected {want} ({side}x{side})")]
    PatchSize { got: usize, want: usize, side: usize },
    #[error("weight vector has length {got}, expected {want}")]
    WeightLength { got: usize, want: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HogConfig {
    pub cells_per_side: usize,
    pub window: usize,
    pub signed_bins: usize,
    pub unsigned_bins: usize,
    pub truncation: f64,
    pub norm_epsilon: f64,
    /// Optional intensity clamp applied before gradients; off by default.
    pub clamp: Option<(f64, f64)>,
}

impl HogConfig {
    pub fn new(cells_per_side: usize) -> Result<Self, HogError> {
        if ![3, 5, 9].contains(&cells_per_side) {
            return Err(HogError::InvalidCells(cells_per_side));
        }
        Ok(Self {
            cells_per_side,
            window: 45,
            signed_bins: SIGNED_BINS,
            unsigned_bins: UNSIGNED_BINS,
            truncation: 0.2,
            norm_epsilon: 1e-4,
            clamp: None,
        })
    }

    pub fn cell_size(&self) -> usize {
        self.window / self.cells_per_side
    }

    pub fn descriptor_dim(&self) -> usize {
        self.cells_per_side * self.cells_per_side * FEATURES_PER_CELL
    }
}

/// Cell-major (row-major cells) descriptor; per-cell layout is
/// [18 signed | 9 unsigned | 4 energy].
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor<S> {
    pub config: HogConfig,
    pub values: Vec<S>,
}

impl<S: Real> HogDescriptor<S> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn encode_hog<S: Real>(patch: &[S], cfg: &HogConfig) -> Result<HogDescriptor<S>, HogError> {
    let side = cfg.window;
    if patch.len() != side * side {
        return Err(HogError::PatchSize { got: patch.len(), want: side * side, side });
    }
    if ![3, 5, 9].contains(&cfg.cells_per_side) {
        return Err(HogError::InvalidCells(cfg.cells_per_side));
    }
    let n = cfg.cells_per_side;
    let cell = (side / n) as f64;

    let clamped;
    let pixels: &[S] = match cfg.clamp {
        Some((lo, hi)) => {
            let (lo, hi) = (S::real(lo), S::real(hi));
            clamped = patch.iter().map(|&p| p.max(lo).min(hi)).collect::<Vec<_>>();
            &clamped
        }
        None => patch,
    };

    // signed orientation histograms, one per cell
    let mut hist = vec![S::zero(); n * n * SIGNED_BINS];
    let bin_width = S::real(2.0 * std::f64::consts::PI / SIGNED_BINS as f64);
    let two_pi = S::real(2.0 * std::f64::consts::PI);
    let half = S::real(0.5);

    for py in 0..side {
        for px in 0..side {
            let at = |x: usize, y: usize| pixels[y * side + x];
            let gx = at((px + 1).min(side - 1), py) - at(px.saturating_sub(1), py);
            let gy = at(px, (py + 1).min(side - 1)) - at(px, py.saturating_sub(1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == S::zero() {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < S::zero() {
                theta = theta + two_pi;
            }

            // bilinear in orientation
            let ob = theta / bin_width - half;
            let o_floor = ob.floor();
            let wo1 = ob - o_floor;
            let wo0 = S::one() - wo1;
            let o0 = wrap_bin(o_floor.as_f64() as i64, SIGNED_BINS);
            let o1 = (o0 + 1) % SIGNED_BINS;

            // bilinear over the 2x2 nearest cell centers; votes falling
            // outside the cell grid are dropped
            let fx = (S::real(px as f64) + half) / S::real(cell) - half;
            let fy = (S::real(py as f64) + half) / S::real(cell) - half;
            let cx0 = fx.floor();
            let cy0 = fy.floor();
            let wx1 = fx - cx0;
            let wy1 = fy - cy0;
            let cx0 = cx0.as_f64() as i64;
            let cy0 = cy0.as_f64() as i64;

            for (cxi, wx) in [(cx0, S::one() - wx1), (cx0 + 1, wx1)] {
                if cxi < 0 || cxi >= n as i64 {
                    continue;
                }
                for (cyi, wy) in [(cy0, S::one() - wy1), (cy0 + 1, wy1)] {
                    if cyi < 0 || cyi >= n as i64 {
                        continue;
                    }
                    let base = (cyi as usize * n + cxi as usize) * SIGNED_BINS;
                    let w = mag * wx * wy;
                    hist[base + o0] = hist[base + o0] + w * wo0;
                    hist[base + o1] = hist[base + o1] + w * wo1;
                }
            }
        }
    }

    // per-cell gradient energy over the unsigned histogram
    let mut energy = vec![S::zero(); n * n];
    for c in 0..n * n {
        let h = &hist[c * SIGNED_BINS..(c + 1) * SIGNED_BINS];
        let mut e = S::zero();
        for b in 0..UNSIGNED_BINS {
            let u = h[b] + h[b + UNSIGNED_BINS];
            e = e + u * u;
        }
        energy[c] = e;
    }

    let eps2 = S::real(cfg.norm_epsilon * cfg.norm_epsilon);
    let truncation = S::real(cfg.truncation);
    let energy_coeff = S::real(ENERGY_COEFF);
    let clamp_cell = |v: i64| v.clamp(0, n as i64 - 1) as usize;

    let mut values = vec![S::zero(); cfg.descriptor_dim()];
    for cy in 0..n {
        for cx in 0..n {
            let c = cy * n + cx;
            let h = &hist[c * SIGNED_BINS..(c + 1) * SIGNED_BINS];

            // four block normalizers from the 2x2 neighborhood energy sums;
            // edge cells replicate their out-of-range neighbors
            let mut norms = [S::zero(); 4];
            for (k, (dy, dx)) in [(-1i64, -1i64), (-1, 1), (1, -1), (1, 1)].iter().enumerate() {
                let yn = clamp_cell(cy as i64 + dy);
                let xn = clamp_cell(cx as i64 + dx);
                let e = energy[c] + energy[cy * n + xn] + energy[yn * n + cx] + energy[yn * n + xn];
                norms[k] = (e + eps2).sqrt();
            }

            let out = &mut values[c * FEATURES_PER_CELL..(c + 1) * FEATURES_PER_CELL];
            let mut energy_feats = [S::zero(); 4];
            for b in 0..SIGNED_BINS {
                let mut acc = S::zero();
                for (k, &nk) in norms.iter().enumerate() {
                    let t = (h[b] / nk).min(truncation);
                    acc = acc + t;
                    energy_feats[k] = energy_feats[k] + t;
                }
                out[b] = half * acc;
            }
            for b in 0..UNSIGNED_BINS {
                let u = h[b] + h[b + UNSIGNED_BINS];
                let mut acc = S::zero();
                for &nk in &norms {
                    acc = acc + (u / nk).min(truncation);
                }
                out[SIGNED_BINS + b] = half * acc;
            }
            for k in 0..4 {
                out[SIGNED_BINS + UNSIGNED_BINS + k] = energy_coeff * energy_feats[k];
            }
        }
    }

    Ok(HogDescriptor { config: cfg.clone(), values })
}

fn wrap_bin(b: i64, bins: usize) -> usize {
    b.rem_euclid(bins as i64) as usize
}

/// Renders a weight vector as per-cell oriented-line glyphs: positive
/// weights in the left panel, negative in the right, one line per unsigned
/// orientation bin. Purely diagnostic.
pub fn render_weights<S: Real>(w: &[S], cfg: &HogConfig) -> Result<Volume<S>, HogError> {
    if w.len() != cfg.descriptor_dim() {
        return Err(HogError::WeightLength { got: w.len(), want: cfg.descriptor_dim() });
    }
    let n = cfg.cells_per_side;
    let tile = 15usize;
    let panel = n * tile;
    let width = 2 * panel;
    let height = panel;
    let mut data = vec![S::zero(); width * height];

    for cy in 0..n {
        for cx in 0..n {
            let cell = cy * n + cx;
            for b in 0..UNSIGNED_BINS {
                let weight = w[cell * FEATURES_PER_CELL + SIGNED_BINS + b];
                if weight == S::zero() {
                    continue;
                }
                // edge direction is perpendicular to the bin's gradient angle
                let angle = (b as f64 + 0.5) * std::f64::consts::PI / UNSIGNED_BINS as f64
                    + std::f64::consts::FRAC_PI_2;
                let (dy, dx) = angle.sin_cos();
                let cx_px = (cx * tile + tile / 2) as f64;
                let cy_px = (cy * tile + tile / 2) as f64;
                let (panel_offset, value) = if weight > S::zero() {
                    (0usize, weight)
                } else {
                    (panel, S::zero() - weight)
                };
                let mut t = -(tile as f64) / 2.0 + 1.0;
                while t <= tile as f64 / 2.0 - 1.0 {
                    let x = (cx_px + t * dx).round() as i64;
                    let y = (cy_px + t * dy).round() as i64;
                    if x >= 0 && (x as usize) < panel && y >= 0 && (y as usize) < height {
                        let i = y as usize * width + panel_offset + x as usize;
                        data[i] = data[i].max(value);
                    }
                    t += 0.5;
                }
            }
        }
    }
    Ok(Volume::new([width, height, 1], [1.0, 1.0, 1.0], data).expect("glyph dims"))
}
