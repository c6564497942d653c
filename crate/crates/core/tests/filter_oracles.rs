//! Independent oracles for the 3D filtering path: brute-force dense 3D
//! convolution for the Gaussian, a Jacobi eigensolver for the Hessian, and
//! single-voxel recomputation of grid feature vectors.

use vagg_core::features3d::{
    dog_response, extract_grid_features, gaussian_smooth, hessian_blobness, DOG_RATIO,
    FILTER_SCALES,
};
use vagg_core::volume::Volume;

fn test_volume(dims: [usize; 3], seed: u64) -> Volume<f64> {
    let mut state = seed;
    Volume::from_fn(dims, [1.0; 3], |x, y, z| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let noise = ((state >> 33) % 1000) as f64 / 1000.0;
        let dx = x as f64 - dims[0] as f64 / 2.0;
        let dy = y as f64 - dims[1] as f64 / 2.0;
        let dz = z as f64 - dims[2] as f64 / 2.0;
        30.0 * (-(dx * dx + dy * dy + dz * dz) / 18.0).exp() + noise
    })
}

/// Dense truncated 3D Gaussian convolution with replicated borders; no
/// separability assumption.
fn direct_gaussian(v: &Volume<f64>, sigma: f64) -> Volume<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut weights = Vec::new();
    let mut total = 0.0;
    for dz in -radius..=radius {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let w = (-((dx * dx + dy * dy + dz * dz) as f64) / (2.0 * sigma * sigma)).exp();
                weights.push((dx, dy, dz, w));
                total += w;
            }
        }
    }
    let dims = v.dims();
    let clamp = |c: i64, d: usize| c.clamp(0, d as i64 - 1) as usize;
    Volume::from_fn(dims, v.spacing(), |x, y, z| {
        let mut acc = 0.0;
        for &(dx, dy, dz, w) in &weights {
            acc += w
                * v.at(
                    clamp(x as i64 + dx, dims[0]),
                    clamp(y as i64 + dy, dims[1]),
                    clamp(z as i64 + dz, dims[2]),
                );
        }
        acc / total
    })
}

#[test]
fn separable_smoothing_matches_direct_convolution() {
    let v = test_volume([14, 15, 16], 41);
    for sigma in [1.0, 2.0] {
        let fast = gaussian_smooth(&v, sigma).unwrap();
        let slow = direct_gaussian(&v, sigma);
        let scale: f64 = slow.data().iter().map(|x| x.abs()).fold(0.0, f64::max);
        for i in 0..fast.len() {
            let diff = (fast.data()[i] - slow.data()[i]).abs();
            assert!(diff <= 1e-5 * scale, "voxel {i}: {diff} vs scale {scale}");
        }
    }
}

/// Cyclic Jacobi eigensolver, independent of the analytic route used by
/// the implementation.
fn jacobi_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    for _ in 0..64 {
        let mut off = 0.0;
        for p in 0..3 {
            for q in p + 1..3 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..3 {
            for q in p + 1..3 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut b = a;
                for k in 0..3 {
                    b[p][k] = c * a[p][k] - s * a[q][k];
                    b[q][k] = s * a[p][k] + c * a[q][k];
                }
                let mut d = b;
                for k in 0..3 {
                    d[k][p] = c * b[k][p] - s * b[k][q];
                    d[k][q] = s * b[k][p] + c * b[k][q];
                }
                a = d;
            }
        }
    }
    let mut eig = [a[0][0], a[1][1], a[2][2]];
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

#[test]
fn analytic_eigenvalues_match_jacobi() {
    let mut state = 7u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) % 2000) as f64 / 1000.0 - 1.0
    };
    for _ in 0..500 {
        let (a, b, c) = (next(), next(), next());
        let (d, e, f) = (next(), next(), next());
        let fast = vagg_core::features3d::eigenvalues_sym3(a, b, c, d, e, f);
        let slow = jacobi_eigenvalues([[a, d, e], [d, b, f], [e, f, c]]);
        for k in 0..3 {
            assert!(
                (fast[k] - slow[k]).abs() < 1e-9,
                "eig {k}: {} vs {}",
                fast[k],
                slow[k]
            );
        }
    }
}

/// Recomputes one grid voxel's blobness from scratch: direct convolution
/// for the smoothing, explicit finite differences, Jacobi eigenvalues.
#[test]
fn grid_feature_vector_matches_single_voxel_oracle() {
    let v = test_volume([30, 30, 30], 3);
    let field = extract_grid_features(&v).unwrap();
    let (gx, gy, gz) = (4, 5, 3);
    let (x, y, z) = (3 * gx, 3 * gy, 3 * gz);
    let fv = field.vector(field.grid_index(gx, gy, gz));

    // intensity is the raw voxel
    assert_eq!(fv[0], v.at(x, y, z));

    for (si, &sigma) in FILTER_SCALES.iter().enumerate() {
        let smoothed = direct_gaussian(&v, sigma);
        let at = |dx: i64, dy: i64, dz: i64| {
            smoothed.at(
                (x as i64 + dx) as usize,
                (y as i64 + dy) as usize,
                (z as i64 + dz) as usize,
            )
        };
        let n = sigma * sigma;
        let hxx = (at(1, 0, 0) - 2.0 * at(0, 0, 0) + at(-1, 0, 0)) * n;
        let hyy = (at(0, 1, 0) - 2.0 * at(0, 0, 0) + at(0, -1, 0)) * n;
        let hzz = (at(0, 0, 1) - 2.0 * at(0, 0, 0) + at(0, 0, -1)) * n;
        let hxy = (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) / 4.0 * n;
        let hxz = (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) / 4.0 * n;
        let hyz = (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) / 4.0 * n;
        let eig = jacobi_eigenvalues([
            [hxx, hxy, hxz],
            [hxy, hyy, hyz],
            [hxz, hyz, hzz],
        ]);
        let expected = if eig[2] < 0.0 { eig[2] * eig[2] / eig[0].abs() } else { 0.0 };
        let got = fv[1 + si];
        assert!(
            (got - expected).abs() <= 1e-5 * expected.abs().max(1e-3),
            "blobness sigma {sigma}: {got} vs oracle {expected}"
        );

        // DoG from two direct convolutions
        let coarse = direct_gaussian(&v, DOG_RATIO * sigma);
        let dog_expected = smoothed.at(x, y, z) - coarse.at(x, y, z);
        let dog_got = fv[4 + si];
        assert!(
            (dog_got - dog_expected).abs() <= 1e-5 * dog_expected.abs().max(1e-3),
            "dog sigma {sigma}: {dog_got} vs oracle {dog_expected}"
        );
    }

    // neighborhood averages by brute-force summation over the clipped cube
    for (ri, &radius) in vagg_core::features3d::AVERAGE_RADII.iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        let dims = v.dims();
        for zz in z.saturating_sub(radius)..=(z + radius).min(dims[2] - 1) {
            for yy in y.saturating_sub(radius)..=(y + radius).min(dims[1] - 1) {
                for xx in x.saturating_sub(radius)..=(x + radius).min(dims[0] - 1) {
                    sum += v.at(xx, yy, zz);
                    count += 1;
                }
            }
        }
        let expected = sum / count as f64;
        let got = fv[7 * (1 + ri)];
        assert!(
            (got - expected).abs() <= 1e-10 * expected.abs().max(1.0),
            "avg radius {radius}: {got} vs {expected}"
        );
    }
}

#[test]
fn dog_linearity_against_direct() {
    let v = test_volume([12, 12, 12], 99);
    let fast = dog_response(&v, 1.5).unwrap();
    let fine = direct_gaussian(&v, 1.5);
    let coarse = direct_gaussian(&v, 1.5 * DOG_RATIO);
    let scale: f64 = fast.data().iter().map(|x| x.abs()).fold(0.0, f64::max);
    for i in 0..fast.len() {
        let expected = fine.data()[i] - coarse.data()[i];
        assert!((fast.data()[i] - expected).abs() <= 1e-5 * scale.max(1e-6));
    }
}
