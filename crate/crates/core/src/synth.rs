//! Seeded synthetic volumes for desk-scale end-to-end validation:
//! ellipsoidal bright nodes (the detection targets) and bright tubes
//! (vessel-like distractors that look blob-like in single 2D views but not
//! in 3D), over a textured background. Nodes are labeled 1..n in the mask;
//! tubes are never labeled -- they are the designed false-positive source.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features3d::gaussian_smooth;
use crate::num::derive_seed;
use crate::volume::{save_volume, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("failed to place shape {shape} after {attempts} rejection attempts")]
    PlacementFailed { shape: usize, attempts: usize },
    #[error("dataset needs at least 1 patient")]
    NoPatients,
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    /// Inclusive per-volume node count range.
    pub n_nodes: (usize, usize),
    /// Node semi-axis range in millimeters.
    pub node_semiaxes_mm: (f64, f64),
    pub n_tubes: (usize, usize),
    pub tube_radius_mm: (f64, f64),
    /// Sub-threshold bright blobs: unlabeled distractors whose size range
    /// abuts the node range from below, the main false-positive source for
    /// candidate generation.
    pub n_distractors: (usize, usize),
    pub distractor_semiaxes_mm: (f64, f64),
    /// Node/tube intensity offset over the background.
    pub contrast: f64,
    /// Standard deviation of the raw background noise before smoothing.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [128, 128, 128],
            spacing: [1.0, 1.0, 1.0],
            n_nodes: (3, 8),
            node_semiaxes_mm: (5.0, 12.0),
            n_tubes: (4, 10),
            tube_radius_mm: (3.0, 7.0),
            contrast: 60.0,
            noise_sigma: 160.0,
            seed: 0,
        }
    }
}

const BACKGROUND_BASE: f64 = 100.0;
const NOISE_SMOOTH_SIGMA: f64 = 2.0;
const PLACEMENT_GAP: f64 = 2.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 200;
/// Per-shape contrast multiplier range; faint shapes keep the voxel
/// classifier honest while staying above half contrast.
const CONTRAST_MULT: (f64, f64) = (0.7, 1.0);

#[derive(Debug, Clone)]
struct NodeShape {
    center: [f64; 3],
    semiaxes: [f64; 3],
    rotation: [[f64; 3]; 3],
    contrast: f64,
}

#[derive(Debug, Clone)]
struct TubeShape {
    p0: [f64; 3],
    p1: [f64; 3],
    radius: f64,
    contrast: f64,
}

/// Adds a soft-edged ellipsoid to `data`; voxels with normalized radius at
/// most 1 are inside, the intensity ramps to zero over about two voxels.
pub fn add_ellipsoid(
    data: &mut [f32],
    dims: [usize; 3],
    center: [f64; 3],
    semiaxes: [f64; 3],
    rotation: [[f64; 3]; 3],
    contrast: f64,
) {
    let r_max = semiaxes[0].max(semiaxes[1]).max(semiaxes[2]);
    let r_min = semiaxes[0].min(semiaxes[1]).min(semiaxes[2]);
    for_each_in_bbox(dims, center, r_max + 3.0, |x, y, z, i| {
        let f = ellipsoid_radius([x as f64, y as f64, z as f64], center, semiaxes, rotation);
        let w = soft_weight((f - 1.0) * r_min);
        if w > 0.0 {
            data[i] += (contrast * w) as f32;
        }
    });
}

/// Adds a soft-edged capsule (cylinder with hemispherical caps).
pub fn add_capsule(
    data: &mut [f32],
    dims: [usize; 3],
    p0: [f64; 3],
    p1: [f64; 3],
    radius: f64,
    contrast: f64,
) {
    let lo = [p0[0].min(p1[0]), p0[1].min(p1[1]), p0[2].min(p1[2])];
    let hi = [p0[0].max(p1[0]), p0[1].max(p1[1]), p0[2].max(p1[2])];
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let half_extent = ((hi[0] - lo[0]).max(hi[1] - lo[1]).max(hi[2] - lo[2])) / 2.0;
    for_each_in_bbox(dims, center, half_extent + radius + 3.0, |x, y, z, i| {
        let d = point_segment_distance([x as f64, y as f64, z as f64], p0, p1) - radius;
        let w = soft_weight(d);
        if w > 0.0 {
            data[i] += (contrast * w) as f32;
        }
    });
}

fn soft_weight(signed_distance: f64) -> f64 {
    ((1.0 - signed_distance) / 2.0).clamp(0.0, 1.0)
}

fn ellipsoid_radius(
    p: [f64; 3],
    center: [f64; 3],
    semiaxes: [f64; 3],
    rot: [[f64; 3]; 3],
) -> f64 {
    let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
    let mut q = [0.0f64; 3];
    for (r, row) in rot.iter().enumerate() {
        q[r] = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
    }
    ((q[0] / semiaxes[0]).powi(2) + (q[1] / semiaxes[1]).powi(2) + (q[2] / semiaxes[2]).powi(2))
        .sqrt()
}

fn for_each_in_bbox(
    dims: [usize; 3],
    center: [f64; 3],
    half_extent: f64,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let lo = |c: f64| ((c - half_extent).floor().max(0.0)) as usize;
    let hi = |c: f64, d: usize| ((c + half_extent).ceil() as usize).min(d - 1);
    let (x0, x1) = (lo(center[0]), hi(center[0], dims[0]));
    let (y0, y1) = (lo(center[1]), hi(center[1], dims[1]));
    let (z0, z1) = (lo(center[2]), hi(center[2], dims[2]));
    for z in z0..=z1 {
        for y in y0..=y1 {
            for x in x0..=x1 {
                f(x, y, z, x + dims[0] * (y + dims[1] * z));
            }
        }
    }
}

fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let ab2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if ab2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / ab2).clamp(0.0, 1.0)
    };
    let c = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt()
}

fn segment_segment_distance(a0: [f64; 3], a1: [f64; 3], b0: [f64; 3], b1: [f64; 3]) -> f64 {
    // sampled approximation is plenty for rejection placement
    let mut best = f64::MAX;
    const STEPS: usize = 24;
    for i in 0..=STEPS {
        let t = i as f64 / STEPS as f64;
        let p = [
            a0[0] + t * (a1[0] - a0[0]),
            a0[1] + t * (a1[1] - a0[1]),
            a0[2] + t * (a1[2] - a0[2]),
        ];
        best = best.min(point_segment_distance(p, b0, b1));
    }
    best
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // uniform rotation from a normalized random quaternion
    let q: [f64; 4] = {
        let mut q = [0.0f64; 4];
        for v in &mut q {
            *v = StandardNormal.sample(rng);
        }
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    };
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Generates one (image, mask) phantom pair; bit-identical for a fixed
/// spec (the seed fully determines every draw).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume<f32>, Volume<u16>), SynthError> {
    let dims = spec.dims;
    let n_voxels = dims[0] * dims[1] * dims[2];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // background: low-frequency ramp plus smoothed noise
    let ramp_span = 0.3 * spec.contrast;
    let g: [f64; 3] = [
        rng.gen_range(-1.0..1.0) * ramp_span / dims[0] as f64,
        rng.gen_range(-1.0..1.0) * ramp_span / dims[1] as f64,
        rng.gen_range(-1.0..1.0) * ramp_span / dims[2] as f64,
    ];
    let mut noise = Vec::with_capacity(n_voxels);
    for _ in 0..n_voxels {
        let n: f64 = StandardNormal.sample(&mut rng);
        noise.push((n * spec.noise_sigma) as f32);
    }
    let noise = gaussian_smooth(
        &Volume::new(dims, spec.spacing, noise)?,
        NOISE_SMOOTH_SIGMA,
    )
    .expect("positive sigma");

    let mut image = vec![0.0f32; n_voxels];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * (y + dims[1] * z);
                let ramp = g[0] * (x as f64 - dims[0] as f64 / 2.0)
                    + g[1] * (y as f64 - dims[1] as f64 / 2.0)
                    + g[2] * (z as f64 - dims[2] as f64 / 2.0);
                image[i] = (BACKGROUND_BASE + ramp) as f32 + noise.data()[i];
            }
        }
    }

    // place nodes, then tubes, with pairwise rejection
    let vox = |mm: f64| mm / spec.spacing[0] as f64; // isotropic default
    let n_nodes = rng.gen_range(spec.n_nodes.0..=spec.n_nodes.1);
    let mut nodes: Vec<NodeShape> = Vec::with_capacity(n_nodes);
    for shape in 0..n_nodes {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let semiaxes = [
                vox(rng.gen_range(spec.node_semiaxes_mm.0..=spec.node_semiaxes_mm.1)),
                vox(rng.gen_range(spec.node_semiaxes_mm.0..=spec.node_semiaxes_mm.1)),
                vox(rng.gen_range(spec.node_semiaxes_mm.0..=spec.node_semiaxes_mm.1)),
            ];
            let r_max = semiaxes[0].max(semiaxes[1]).max(semiaxes[2]);
            let margin = r_max + 4.0;
            let center = [
                rng.gen_range(margin..dims[0] as f64 - margin),
                rng.gen_range(margin..dims[1] as f64 - margin),
                rng.gen_range(margin..dims[2] as f64 - margin),
            ];
            let rotation = random_rotation(&mut rng);
            let contrast = spec.contrast * rng.gen_range(CONTRAST_MULT.0..=CONTRAST_MULT.1);
            let candidate = NodeShape { center, semiaxes, rotation, contrast };
            if nodes.iter().all(|n| {
                let r_other = n.semiaxes.iter().cloned().fold(0.0, f64::max);
                dist3(n.center, center) > r_other + r_max + PLACEMENT_GAP
            }) {
                nodes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::PlacementFailed { shape, attempts: MAX_PLACEMENT_ATTEMPTS });
        }
    }

    let n_tubes = rng.gen_range(spec.n_tubes.0..=spec.n_tubes.1);
    let mut tubes: Vec<TubeShape> = Vec::with_capacity(n_tubes);
    for shape in 0..n_tubes {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let radius = vox(rng.gen_range(spec.tube_radius_mm.0..=spec.tube_radius_mm.1));
            let center = [
                rng.gen_range(radius + 2.0..dims[0] as f64 - radius - 2.0),
                rng.gen_range(radius + 2.0..dims[1] as f64 - radius - 2.0),
                rng.gen_range(radius + 2.0..dims[2] as f64 - radius - 2.0),
            ];
            let dir = random_unit(&mut rng);
            let min_dim = dims.iter().copied().min().unwrap_or(64) as f64;
            let half_len = rng.gen_range(0.25..0.65) * min_dim;
            let p0 = [
                center[0] - half_len * dir[0],
                center[1] - half_len * dir[1],
                center[2] - half_len * dir[2],
            ];
            let p1 = [
                center[0] + half_len * dir[0],
                center[1] + half_len * dir[1],
                center[2] + half_len * dir[2],
            ];
            let contrast = spec.contrast * rng.gen_range(CONTRAST_MULT.0..=CONTRAST_MULT.1);
            let candidate = TubeShape { p0, p1, radius, contrast };
            let clear_of_nodes = nodes.iter().all(|n| {
                let r = n.semiaxes.iter().cloned().fold(0.0, f64::max);
                point_segment_distance(n.center, p0, p1) > r + radius + PLACEMENT_GAP
            });
            let clear_of_tubes = tubes.iter().all(|t| {
                segment_segment_distance(t.p0, t.p1, p0, p1) > t.radius + radius + PLACEMENT_GAP
            });
            if clear_of_nodes && clear_of_tubes {
                tubes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::PlacementFailed {
                shape: n_nodes + shape,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    let mut mask = vec![0u16; n_voxels];
    for (label, node) in nodes.iter().enumerate() {
        add_ellipsoid(&mut image, dims, node.center, node.semiaxes, node.rotation, node.contrast);
        let r_max = node.semiaxes.iter().cloned().fold(0.0, f64::max);
        for_each_in_bbox(dims, node.center, r_max + 2.0, |x, y, z, i| {
            let f = ellipsoid_radius(
                [x as f64, y as f64, z as f64],
                node.center,
                node.semiaxes,
                node.rotation,
            );
            if f <= 1.0 {
                mask[i] = (label + 1) as u16;
            }
        });
    }
    for tube in &tubes {
        add_capsule(&mut image, dims, tube.p0, tube.p1, tube.radius, tube.contrast);
    }

    Ok((
        Volume::new(dims, spec.spacing, image)?,
        Volume::new(dims, spec.spacing, mask)?,
    ))
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = dist3(v, [0.0; 3]);
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub image_path: String,
    pub mask_path: String,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkManifest {
    pub root: PathBuf,
    pub patients: Vec<PatientRecord>,
}

/// Writes an n-patient dataset under `dir`: one `p<ID>/image.vaggvol` +
/// `p<ID>/mask.vaggvol` pair per patient plus `manifest.csv`. Per-patient
/// seeds are derived from `seed`, so distinct patients get distinct
/// volumes and the whole directory is reproducible byte for byte.
pub fn generate_benchmark(
    dir: &Path,
    n_patients: usize,
    spec: &PhantomSpec,
    seed: u64,
) -> Result<BenchmarkManifest, SynthError> {
    if n_patients == 0 {
        return Err(SynthError::NoPatients);
    }
    std::fs::create_dir_all(dir)
        .map_err(|source| SynthError::Io { path: dir.to_path_buf(), source })?;

    let mut patients = Vec::with_capacity(n_patients);
    for i in 0..n_patients {
        let patient_id = format!("p{i:03}");
        let pdir = dir.join(&patient_id);
        std::fs::create_dir_all(&pdir)
            .map_err(|source| SynthError::Io { path: pdir.clone(), source })?;
        let mut pspec = spec.clone();
        pspec.seed = derive_seed(seed, i as u64);
        let (image, mask) = generate_phantom(&pspec)?;
        save_volume(&image, &pdir.join("image.vaggvol"))?;
        save_volume(&mask, &pdir.join("mask.vaggvol"))?;
        let n_nodes = mask.data().iter().copied().max().unwrap_or(0) as usize;
        patients.push(PatientRecord {
            patient_id: patient_id.clone(),
            image_path: format!("{patient_id}/image.vaggvol"),
            mask_path: format!("{patient_id}/mask.vaggvol"),
            n_nodes,
        });
    }

    let manifest_path = dir.join("manifest.csv");
    let mut text = String::from("patient_id,image_path,mask_path,n_nodes\n");
    for p in &patients {
        text.push_str(&format!(
            "{},{},{},{}\n",
            p.patient_id, p.image_path, p.mask_path, p.n_nodes
        ));
    }
    std::fs::File::create(&manifest_path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|source| SynthError::Io { path: manifest_path, source })?;

    Ok(BenchmarkManifest { root: dir.to_path_buf(), patients })
}

/// Reads a `manifest.csv` dataset description.
pub fn read_manifest(manifest_path: &Path) -> Result<BenchmarkManifest, SynthError> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|source| SynthError::Io { path: manifest_path.to_path_buf(), source })?;
    let mut patients = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "patient_id,image_path,mask_path,n_nodes" {
                return Err(SynthError::BadManifest { line: 1, reason: "bad header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(SynthError::BadManifest {
                line: i + 1,
                reason: "expected 4 fields".into(),
            });
        }
        patients.push(PatientRecord {
            patient_id: fields[0].to_string(),
            image_path: fields[1].to_string(),
            mask_path: fields[2].to_string(),
            n_nodes: fields[3].trim().parse().map_err(|_| SynthError::BadManifest {
                line: i + 1,
                reason: "bad n_nodes".into(),
            })?,
        });
    }
    Ok(BenchmarkManifest {
        root: manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        patients,
    })
}
