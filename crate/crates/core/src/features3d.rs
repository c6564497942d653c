//! Voxel-level 3D features on a downsampled grid: intensity, multiscale
//! Hessian blobness, multiscale difference-of-Gaussians, and cube
//! neighborhood averages of all of these.
//!
//! All filters are pure functions of immutable volumes; internal
//! parallelism is per-voxel and does not change results.

use rayon::prelude::*;
use thiserror::Error;

use crate::num::Real;
use crate::volume::Volume;

/// Gaussian scales (voxels) for blobness and DoG.
pub const FILTER_SCALES: [f64; 3] = [1.0, 2.0, 4.0];
/// Cube half-widths (voxels) for the neighborhood averages.
pub const AVERAGE_RADII: [usize; 3] = [3, 6, 12];
/// Outer/inner sigma ratio of the DoG.
pub const DOG_RATIO: f64 = 1.6;
/// Sampling stride of the feature grid.
pub const GRID_STRIDE: usize = 3;
/// Intensity + 3 blobness + 3 DoG.
pub const BASE_FEATURES: usize = 7;
/// Base features plus their averages at each radius.
pub const FEATURES_PER_VOXEL: usize = BASE_FEATURES * (1 + AVERAGE_RADII.len());

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("radius must be positive")]
    ZeroRadius,
    #[error("volume dims {0:?} are too small; need at least 27 in every dimension")]
    VolumeTooSmall([usize; 3]),
}

/// Per-grid-voxel feature vectors sampled on the stride-3 lattice.
///
/// Layout per voxel: `[intensity, blob@1, blob@2, blob@4, dog@1, dog@2,
/// dog@4]` followed by the averages of those seven at radii 3, 6, 12
/// (radius-major). Vectors are stored grid-voxel-major, x fastest.
#[derive(Debug, Clone)]
pub struct GridFeatureField<S> {
    pub grid_dims: [usize; 3],
    pub stride: usize,
    pub features_per_voxel: usize,
    pub scales_used: Vec<f64>,
    pub source_dims: [usize; 3],
    pub source_spacing: [f32; 3],
    values: Vec<S>,
}

impl<S: Real> GridFeatureField<S> {
    pub fn n_grid_voxels(&self) -> usize {
        self.grid_dims[0] * self.grid_dims[1] * self.grid_dims[2]
    }

    #[inline]
    pub fn grid_index(&self, gx: usize, gy: usize, gz: usize) -> usize {
        gx + self.grid_dims[0] * (gy + self.grid_dims[1] * gz)
    }

    #[inline]
    pub fn vector(&self, grid_voxel: usize) -> &[S] {
        let o = grid_voxel * self.features_per_voxel;
        &self.values[o..o + self.features_per_voxel]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Full-resolution voxel sampled by grid voxel (gx, gy, gz).
    pub fn source_voxel(&self, gx: usize, gy: usize, gz: usize) -> [usize; 3] {
        [gx * self.stride, gy * self.stride, gz * self.stride]
    }

    /// Spacing of the grid lattice (stride times the source spacing).
    pub fn grid_spacing(&self) -> [f32; 3] {
        let s = self.source_spacing;
        let k = self.stride as f32;
        [s[0] * k, s[1] * k, s[2] * k]
    }
}

fn gaussian_kernel<S: Real>(sigma: f64) -> Vec<S> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut weights = Vec::with_capacity(2 * radius + 1);
    let mut sum = 0.0;
    for i in -(radius as i64)..=(radius as i64) {
        let w = (-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    weights.iter().map(|w| S::real(w / sum)).collect()
}

/// Separable Gaussian smoothing, kernel truncated at 3 sigma, borders
/// replicated.
pub fn gaussian_smooth<S: Real>(v: &Volume<S>, sigma: f64) -> Result<Volume<S>, FeatureError> {
    if !(sigma > 0.0) {
        return Err(FeatureError::NonPositiveSigma(sigma));
    }
    let kernel = gaussian_kernel::<S>(sigma);
    let mut data = convolve_axis(v.data(), v.dims(), 0, &kernel);
    data = convolve_axis(&data, v.dims(), 1, &kernel);
    data = convolve_axis(&data, v.dims(), 2, &kernel);
    Ok(Volume::new(v.dims(), v.spacing(), data).expect("dims preserved"))
}

/// 1D convolution along `axis` with replicated borders.
fn convolve_axis<S: Real>(data: &[S], dims: [usize; 3], axis: usize, kernel: &[S]) -> Vec<S> {
    let [nx, ny, nz] = dims;
    let radius = kernel.len() / 2;
    let mut out = vec![S::zero(); data.len()];
    match axis {
        0 => {
            out.par_chunks_mut(nx).zip(data.par_chunks(nx)).for_each(|(o, line)| {
                for x in 0..nx {
                    let mut acc = S::zero();
                    for (k, &w) in kernel.iter().enumerate() {
                        let xi = (x + k).saturating_sub(radius).min(nx - 1);
                        acc = acc + w * line[xi];
                    }
                    o[x] = acc;
                }
            });
        }
        1 => {
            let slab = nx * ny;
            out.par_chunks_mut(slab).enumerate().for_each(|(z, o)| {
                let base = z * slab;
                for y in 0..ny {
                    let orow = &mut o[y * nx..(y + 1) * nx];
                    for (k, &w) in kernel.iter().enumerate() {
                        let yi = (y + k).saturating_sub(radius).min(ny - 1);
                        let irow = &data[base + yi * nx..base + yi * nx + nx];
                        for x in 0..nx {
                            orow[x] = orow[x] + w * irow[x];
                        }
                    }
                }
            });
        }
        2 => {
            let slab = nx * ny;
            out.par_chunks_mut(slab).enumerate().for_each(|(z, o)| {
                for (k, &w) in kernel.iter().enumerate() {
                    let zi = (z + k).saturating_sub(radius).min(nz - 1);
                    let islab = &data[zi * slab..(zi + 1) * slab];
                    for i in 0..slab {
                        o[i] = o[i] + w * islab[i];
                    }
                }
            });
        }
        _ => unreachable!("axis must be 0..3"),
    }
    out
}

/// Eigenvalues of a symmetric 3x3 matrix, ascending (signed).
///
/// Analytic trigonometric solution; deterministic and branch-stable for the
/// near-isotropic case.
pub fn eigenvalues_sym3<S: Real>(a: S, b: S, c: S, d: S, e: S, f: S) -> [S; 3] {
    // matrix [[a, d, e], [d, b, f], [e, f, c]]
    let p1 = d * d + e * e + f * f;
    let q = (a + b + c) / S::real(3.0);
    let p2 = (a - q) * (a - q) + (b - q) * (b - q) + (c - q) * (c - q) + S::real(2.0) * p1;
    if p2 <= S::epsilon() * S::epsilon() * (q * q + S::one()) {
        return [q, q, q];
    }
    let p = (p2 / S::real(6.0)).sqrt();
    let inv_p = S::one() / p;
    let ba = (a - q) * inv_p;
    let bb = (b - q) * inv_p;
    let bc = (c - q) * inv_p;
    let bd = d * inv_p;
    let be = e * inv_p;
    let bf = f * inv_p;
    let det_b = ba * (bb * bc - bf * bf) - bd * (bd * bc - bf * be) + be * (bd * bf - bb * be);
    let r = (det_b / S::real(2.0)).max(-S::one()).min(S::one());
    let phi = r.acos() / S::real(3.0);
    let two_p = S::real(2.0) * p;
    let hi = q + two_p * phi.cos();
    let lo = q + two_p * (phi + S::real(2.0 * std::f64::consts::PI / 3.0)).cos();
    let mid = S::real(3.0) * q - hi - lo;
    [lo, mid, hi]
}

/// Scale-normalized bright-blob score from the Gaussian-Hessian eigenvalues.
///
/// With lambda1 <= lambda2 <= lambda3 (signed) of the sigma^2-normalized
/// Hessian, the score is lambda3^2 / |lambda1| when all eigenvalues are
/// negative and 0 otherwise, so plates and tubes with a flat direction
/// score 0 and the score is always non-negative.
pub fn hessian_blobness<S: Real>(v: &Volume<S>, sigma: f64) -> Result<Volume<S>, FeatureError> {
    let smoothed = gaussian_smooth(v, sigma)?;
    let [nx, ny, nz] = v.dims();
    let s = smoothed.data();
    let norm = S::real(sigma * sigma);
    let quarter = S::real(0.25);
    let slab = nx * ny;
    let mut out = vec![S::zero(); s.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(z, o)| {
        let zm = z.saturating_sub(1);
        let zp = (z + 1).min(nz - 1);
        for y in 0..ny {
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(ny - 1);
            for x in 0..nx {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(nx - 1);
                let idx = |a: usize, b: usize, c: usize| a + nx * (b + ny * c);
                let center = s[idx(x, y, z)];
                let two_c = center + center;
                let hxx = (s[idx(xp, y, z)] - two_c + s[idx(xm, y, z)]) * norm;
                let hyy = (s[idx(x, yp, z)] - two_c + s[idx(x, ym, z)]) * norm;
                let hzz = (s[idx(x, y, zp)] - two_c + s[idx(x, y, zm)]) * norm;
                let hxy = (s[idx(xp, yp, z)] - s[idx(xp, ym, z)] - s[idx(xm, yp, z)]
                    + s[idx(xm, ym, z)])
                    * quarter
                    * norm;
                let hxz = (s[idx(xp, y, zp)] - s[idx(xp, y, zm)] - s[idx(xm, y, zp)]
                    + s[idx(xm, y, zm)])
                    * quarter
                    * norm;
                let hyz = (s[idx(x, yp, zp)] - s[idx(x, yp, zm)] - s[idx(x, ym, zp)]
                    + s[idx(x, ym, zm)])
                    * quarter
                    * norm;
                let [l1, _l2, l3] = eigenvalues_sym3(hxx, hyy, hzz, hxy, hxz, hyz);
                o[y * nx + x] = if l3 < S::zero() { l3 * l3 / l1.abs() } else { S::zero() };
            }
        }
    });
    Ok(Volume::new(v.dims(), v.spacing(), out).expect("dims preserved"))
}

/// Difference of Gaussians: G(sigma) * v - G(1.6 sigma) * v.
pub fn dog_response<S: Real>(v: &Volume<S>, sigma: f64) -> Result<Volume<S>, FeatureError> {
    let fine = gaussian_smooth(v, sigma)?;
    let coarse = gaussian_smooth(v, DOG_RATIO * sigma)?;
    let data = fine
        .data()
        .iter()
        .zip(coarse.data())
        .map(|(&a, &b)| a - b)
        .collect();
    Ok(Volume::new(v.dims(), v.spacing(), data).expect("dims preserved"))
}

/// Summed-area table with a one-voxel zero border, f64 accumulation.
struct IntegralImage {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl IntegralImage {
    fn build<S: Real>(data: &[S], dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        let (tx, ty) = (nx + 1, ny + 1);
        let mut table = vec![0.0f64; tx * ty * (nz + 1)];
        for z in 0..nz {
            for y in 0..ny {
                let mut row = 0.0f64;
                for x in 0..nx {
                    row += data[x + nx * (y + ny * z)].as_f64();
                    let i = (x + 1) + tx * ((y + 1) + ty * (z + 1));
                    table[i] = row + table[(x + 1) + tx * (y + ty * (z + 1))]
                        + table[(x + 1) + tx * ((y + 1) + ty * z)]
                        - table[(x + 1) + tx * (y + ty * z)];
                }
            }
        }
        Self { dims, table }
    }

    /// Sum over the inclusive box [lo, hi].
    fn box_sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let tx = self.dims[0] + 1;
        let ty = self.dims[1] + 1;
        let at = |x: usize, y: usize, z: usize| self.table[x + tx * (y + ty * z)];
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0)
            + at(x0, y0, z1)
            + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }
}

/// Mean over the axis-aligned cube of half-width `radius`, clipped to the
/// volume bounds (mean over in-bounds voxels only).
pub fn neighborhood_average<S: Real>(
    v: &Volume<S>,
    radius: usize,
) -> Result<Volume<S>, FeatureError> {
    if radius == 0 {
        return Err(FeatureError::ZeroRadius);
    }
    let sat = IntegralImage::build(v.data(), v.dims());
    let [nx, ny, nz] = v.dims();
    let slab = nx * ny;
    let mut out = vec![S::zero(); v.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(z, o)| {
        let z0 = z.saturating_sub(radius);
        let z1 = (z + radius).min(nz - 1);
        for y in 0..ny {
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius).min(ny - 1);
            for x in 0..nx {
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius).min(nx - 1);
                let count = ((x1 - x0 + 1) * (y1 - y0 + 1) * (z1 - z0 + 1)) as f64;
                let sum = sat.box_sum([x0, y0, z0], [x1, y1, z1]);
                o[y * nx + x] = S::real(sum / count);
            }
        }
    });
    Ok(Volume::new(v.dims(), v.spacing(), out).expect("dims preserved"))
}

/// Computes the 28-dim feature vectors on the stride-3 grid.
///
/// Every field is evaluated at full resolution and then sampled at voxels
/// (3gx, 3gy, 3gz); grid_dims[i] = ceil(dims[i] / 3).
pub fn extract_grid_features<S: Real>(v: &Volume<S>) -> Result<GridFeatureField<S>, FeatureError> {
    let dims = v.dims();
    if dims.iter().any(|&d| d < 27) {
        return Err(FeatureError::VolumeTooSmall(dims));
    }
    let grid_dims = [
        div_ceil(dims[0], GRID_STRIDE),
        div_ceil(dims[1], GRID_STRIDE),
        div_ceil(dims[2], GRID_STRIDE),
    ];
    let n_grid = grid_dims[0] * grid_dims[1] * grid_dims[2];
    let mut values = vec![S::zero(); n_grid * FEATURES_PER_VOXEL];

    let mut write_field = |feature: usize, field: &Volume<S>| {
        let mut gi = 0;
        for gz in 0..grid_dims[2] {
            for gy in 0..grid_dims[1] {
                for gx in 0..grid_dims[0] {
                    values[gi * FEATURES_PER_VOXEL + feature] =
                        field.at(gx * GRID_STRIDE, gy * GRID_STRIDE, gz * GRID_STRIDE);
                    gi += 1;
                }
            }
        }
    };

    // One base field at a time keeps peak memory at a few full-res volumes.
    for (base_idx, field) in base_fields(v)?.into_iter().enumerate() {
        write_field(base_idx, &field);
        for (ri, &radius) in AVERAGE_RADII.iter().enumerate() {
            let avg = neighborhood_average(&field, radius)?;
            write_field(BASE_FEATURES * (1 + ri) + base_idx, &avg);
        }
    }

    Ok(GridFeatureField {
        grid_dims,
        stride: GRID_STRIDE,
        features_per_voxel: FEATURES_PER_VOXEL,
        scales_used: FILTER_SCALES.to_vec(),
        source_dims: dims,
        source_spacing: v.spacing(),
        values,
    })
}

/// The seven base fields in feature order. Fields are computed lazily one
/// after another; the iterator owns the source reference.
fn base_fields<S: Real>(v: &Volume<S>) -> Result<Vec<Volume<S>>, FeatureError> {
    let mut fields = Vec::with_capacity(BASE_FEATURES);
    fields.push(v.clone());
    for &sigma in &FILTER_SCALES {
        fields.push(hessian_blobness(v, sigma)?);
    }
    for &sigma in &FILTER_SCALES {
        fields.push(dog_response(v, sigma)?);
    }
    Ok(fields)
}

pub(crate) fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelIndex;
    use approx::assert_relative_eq;

    fn gaussian_blob(dims: [usize; 3], center: [f64; 3], width: f64, amp: f64) -> Volume<f64> {
        Volume::from_fn(dims, [1.0; 3], |x, y, z| {
            let dx = x as f64 - center[0];
            let dy = y as f64 - center[1];
            let dz = z as f64 - center[2];
            amp * (-(dx * dx + dy * dy + dz * dz) / (2.0 * width * width)).exp()
        })
    }

    fn cylinder(dims: [usize; 3], center: [f64; 2], radius: f64, amp: f64) -> Volume<f64> {
        // axis along z, soft profile matching the blob's radial falloff
        Volume::from_fn(dims, [1.0; 3], |x, y, _| {
            let dx = x as f64 - center[0];
            let dy = y as f64 - center[1];
            amp * (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp()
        })
    }

    #[test]
    fn eigenvalues_match_invariants() {
        // trace and determinant of [[2,1,0],[1,3,-1],[0,-1,1]]
        let eig = eigenvalues_sym3(2.0, 3.0, 1.0, 1.0, 0.0, -1.0);
        assert!(eig[0] <= eig[1] && eig[1] <= eig[2]);
        let trace: f64 = eig.iter().sum();
        assert_relative_eq!(trace, 6.0, max_relative = 1e-12);
        let det = eig[0] * eig[1] * eig[2];
        // det = 2(3*1 - 1) - 1(1*1 - 0) + 0 = 3
        assert_relative_eq!(det, 3.0, max_relative = 1e-10);

        let iso = eigenvalues_sym3(2.0, 2.0, 2.0, 0.0, 0.0, 0.0);
        assert_eq!(iso, [2.0, 2.0, 2.0]);
    }

    #[test]
    fn blobness_peaks_at_blob_center() {
        let v = gaussian_blob([41, 41, 41], [20.0, 20.0, 20.0], 3.0, 100.0);
        let score = hessian_blobness(&v, 3.0).unwrap();
        let (argmax, _) = score
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        assert_eq!(argmax, score.index_of(20, 20, 20));
        assert!(score.at(20, 20, 20) > 0.0);
    }

    #[test]
    fn blobness_of_constant_volume_is_zero() {
        let v = Volume::filled([30, 30, 30], [1.0; 3], 7.5f64);
        let score = hessian_blobness(&v, 2.0).unwrap();
        assert!(score.data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn blobness_nonnegative_on_noise() {
        let mut state = 12345u64;
        let v = Volume::from_fn([24, 24, 24], [1.0; 3], |_, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 40) as f64 / 1000.0
        });
        let score = hessian_blobness(&v, 1.0).unwrap();
        assert!(score.data().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn tube_scores_below_equal_sphere() {
        let sphere = gaussian_blob([41, 41, 41], [20.0; 3], 4.0, 100.0);
        let tube = cylinder([41, 41, 41], [20.0, 20.0], 4.0, 100.0);
        let bs = hessian_blobness(&sphere, 4.0).unwrap().at(20, 20, 20);
        let bt = hessian_blobness(&tube, 4.0).unwrap().at(20, 20, 20);
        assert!(
            bt < bs,
            "tube center blobness {bt} should be below sphere center blobness {bs}"
        );
    }

    #[test]
    fn dog_of_constant_is_zero() {
        let v = Volume::filled([30, 30, 30], [1.0; 3], 3.25f64);
        let d = dog_response(&v, 2.0).unwrap();
        for &x in d.data() {
            assert_relative_eq!(x, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dog_positive_at_blob_center() {
        let v = gaussian_blob([33, 33, 33], [16.0; 3], 2.0, 50.0);
        let d = dog_response(&v, 2.0).unwrap();
        assert!(d.at(16, 16, 16) > 0.0);
    }

    #[test]
    fn dog_is_linear() {
        let v1 = gaussian_blob([20, 20, 20], [9.0, 10.0, 8.0], 2.5, 30.0);
        let mut state = 99u64;
        let v2 = Volume::from_fn([20, 20, 20], [1.0; 3], |_, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 40) as f64 / 500.0
        });
        let combo = Volume::new(
            v1.dims(),
            v1.spacing(),
            v1.data().iter().zip(v2.data()).map(|(&a, &b)| 2.0 * a - 3.0 * b).collect(),
        )
        .unwrap();
        let d1 = dog_response(&v1, 1.5).unwrap();
        let d2 = dog_response(&v2, 1.5).unwrap();
        let dc = dog_response(&combo, 1.5).unwrap();
        let scale: f64 = d1.data().iter().map(|x| x.abs()).fold(0.0, f64::max);
        for i in 0..dc.len() {
            let expect = 2.0 * d1.data()[i] - 3.0 * d2.data()[i];
            assert!((dc.data()[i] - expect).abs() <= 1e-5 * scale.max(1.0));
        }
    }

    #[test]
    fn dog_negation_flips_sign() {
        let v = gaussian_blob([20, 20, 20], [10.0; 3], 2.0, 40.0);
        let neg = v.map(|x| -x);
        let d = dog_response(&v, 2.0).unwrap();
        let dn = dog_response(&neg, 2.0).unwrap();
        for i in 0..d.len() {
            assert_relative_eq!(dn.data()[i], -d.data()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn average_of_constant_is_constant() {
        let v = Volume::filled([15, 15, 15], [1.0; 3], 4.0f64);
        for radius in AVERAGE_RADII {
            let a = neighborhood_average(&v, radius).unwrap();
            assert!(a.data().iter().all(|&x| x == 4.0));
        }
    }

    #[test]
    fn average_of_impulse() {
        let mut data = vec![0.0f64; 15 * 15 * 15];
        data[7 + 15 * (7 + 15 * 7)] = 1.0;
        let v = Volume::new([15, 15, 15], [1.0; 3], data).unwrap();
        let a = neighborhood_average(&v, 3).unwrap();
        assert_eq!(a.at(7, 7, 7), 1.0 / 343.0);
    }

    #[test]
    fn average_clips_at_corner() {
        let v = Volume::filled([20, 20, 20], [1.0; 3], 0.0f64);
        let mut data = v.data().to_vec();
        data[0] = 64.0; // corner voxel
        let v = Volume::new([20, 20, 20], [1.0; 3], data).unwrap();
        let a = neighborhood_average(&v, 3).unwrap();
        // corner cube is 4x4x4 = 64 in-bounds voxels
        assert_eq!(a.at(0, 0, 0), 1.0);
    }

    #[test]
    fn average_shift_commutes() {
        let mut state = 5u64;
        let v = Volume::from_fn([12, 12, 12], [1.0; 3], |_, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 40) % 32) as f64
        });
        let shifted = v.map(|x| x + 9.0);
        let a = neighborhood_average(&v, 3).unwrap();
        let b = neighborhood_average(&shifted, 3).unwrap();
        for i in 0..a.len() {
            assert_relative_eq!(b.data()[i], a.data()[i] + 9.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_dims_and_constant_pattern() {
        let v = Volume::filled([30, 30, 30], [1.0; 3], 5.0f64);
        let field = extract_grid_features(&v).unwrap();
        assert_eq!(field.grid_dims, [10, 10, 10]);
        assert_eq!(field.n_grid_voxels(), 1000);
        assert_eq!(field.features_per_voxel, 28);
        let vec = field.vector(field.grid_index(4, 5, 6));
        // intensity and its three averages are the constant, filters are 0
        for (i, &f) in vec.iter().enumerate() {
            if i == 0 || i == 7 || i == 14 || i == 21 {
                assert_relative_eq!(f, 5.0, epsilon = 1e-9);
            } else {
                assert_relative_eq!(f, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn too_small_volume_is_rejected() {
        let v = Volume::filled([26, 30, 30], [1.0; 3], 0.0f64);
        assert!(matches!(extract_grid_features(&v), Err(FeatureError::VolumeTooSmall(_))));
    }

    #[test]
    fn grid_vector_matches_full_res_filters() {
        let v = gaussian_blob([30, 30, 30], [14.0, 15.0, 13.0], 3.0, 80.0);
        let field = extract_grid_features(&v).unwrap();
        let (gx, gy, gz) = (4, 5, 4);
        let fv = field.vector(field.grid_index(gx, gy, gz));
        let (x, y, z) = (gx * 3, gy * 3, gz * 3);

        assert_eq!(fv[0], v.at(x, y, z));
        for (si, &sigma) in FILTER_SCALES.iter().enumerate() {
            assert_eq!(fv[1 + si], hessian_blobness(&v, sigma).unwrap().at(x, y, z));
            assert_eq!(fv[4 + si], dog_response(&v, sigma).unwrap().at(x, y, z));
        }
        for (ri, &radius) in AVERAGE_RADII.iter().enumerate() {
            let avg_int = neighborhood_average(&v, radius).unwrap();
            assert_eq!(fv[7 * (1 + ri)], avg_int.at(x, y, z));
        }
    }

    #[test]
    fn crop_then_average_consistency() {
        // averages computed at full resolution differ from crop-then-average
        // near the crop border; at the crop center with enough margin they
        // agree exactly, pinning the "full resolution first" evaluation order
        let v = gaussian_blob([64, 64, 64], [30.0; 3], 5.0, 10.0);
        let full = neighborhood_average(&v, 3).unwrap();
        let crop = v.crop_window(VoxelIndex::new(30, 30, 30), 10).unwrap();
        let cropped_avg = neighborhood_average(&crop, 3).unwrap();
        // identical voxel sets; the prefix-sum origins differ, so agreement
        // is to rounding only
        assert_relative_eq!(full.at(30, 30, 30), cropped_avg.at(10, 10, 10), max_relative = 1e-12);
    }
}
