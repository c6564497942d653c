//! Candidate generation: threshold a grid probability map, group voxels by
//! 26-connectivity, map group centroids to full resolution, and label them
//! against a ground-truth mask.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::features3d::GRID_STRIDE;
use crate::num::Real;
use crate::volume::{Volume, VoxelIndex};

/// Half-width of the cube VOI around each candidate (window 45).
pub const VOI_HALF: usize = 22;

#[derive(Debug, Error)]
pub enum CandgenError {
    #[error("centroid {0:?} lies outside the mask volume {1:?}")]
    CentroidOutOfBounds(VoxelIndex, [usize; 3]),
    #[error("bad candidate csv line {line}: {reason}")]
    BadCsv { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub patient_id: String,
    pub centroid: VoxelIndex,
    /// +1 when the centroid falls inside a ground-truth object, else -1.
    pub label: i8,
    /// Mask label of the claimed object; 0 for negatives.
    pub gt_object_id: u16,
    pub voi_half: usize,
}

impl Candidate {
    pub fn is_positive(&self) -> bool {
        self.label > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub source_volume: String,
    pub threshold_used: f64,
}

/// Statistics of a candidate set against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandgenStats {
    pub object_sensitivity: f64,
    pub fp_per_case: usize,
}

/// Groups super-threshold grid voxels by 26-connectivity and returns one
/// full-resolution centroid per group (rounded mean grid coordinate times
/// the grid stride). Groups of any size count.
pub fn generate_candidates<S: Real>(probmap: &Volume<S>, threshold: S) -> Vec<VoxelIndex> {
    let [nx, ny, nz] = probmap.dims();
    let data = probmap.data();
    let mut visited = vec![false; data.len()];
    let mut centroids = Vec::new();
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let start = x + nx * (y + ny * z);
                if visited[start] || data[start] < threshold {
                    continue;
                }
                visited[start] = true;
                stack.push((x, y, z));
                let (mut sx, mut sy, mut sz, mut count) = (0usize, 0usize, 0usize, 0usize);
                while let Some((cx, cy, cz)) = stack.pop() {
                    sx += cx;
                    sy += cy;
                    sz += cz;
                    count += 1;
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                let (px, py, pz) =
                                    (cx as i64 + dx, cy as i64 + dy, cz as i64 + dz);
                                if px < 0
                                    || py < 0
                                    || pz < 0
                                    || px >= nx as i64
                                    || py >= ny as i64
                                    || pz >= nz as i64
                                {
                                    continue;
                                }
                                let (px, py, pz) = (px as usize, py as usize, pz as usize);
                                let ni = px + nx * (py + ny * pz);
                                if !visited[ni] && data[ni] >= threshold {
                                    visited[ni] = true;
                                    stack.push((px, py, pz));
                                }
                            }
                        }
                    }
                }
                centroids.push(VoxelIndex::new(
                    round_mean(sx, count) * GRID_STRIDE,
                    round_mean(sy, count) * GRID_STRIDE,
                    round_mean(sz, count) * GRID_STRIDE,
                ));
            }
        }
    }
    centroids
}

/// Arithmetic mean rounded half-up.
fn round_mean(sum: usize, count: usize) -> usize {
    (2 * sum + count) / (2 * count)
}

/// Assigns each centroid the label of the mask voxel it falls on: +1 with
/// the object id where mask > 0, otherwise -1 with object id 0. Point
/// inclusion only, no tolerance band.
pub fn label_candidates(
    centroids: &[VoxelIndex],
    gt_mask: &Volume<u16>,
    patient_id: &str,
    threshold_used: f64,
    source_volume: &str,
) -> Result<CandidateSet, CandgenError> {
    let mut candidates = Vec::with_capacity(centroids.len());
    for &c in centroids {
        if !gt_mask.contains(c) {
            return Err(CandgenError::CentroidOutOfBounds(c, gt_mask.dims()));
        }
        let object = gt_mask.get(c);
        candidates.push(Candidate {
            patient_id: patient_id.to_string(),
            centroid: c,
            label: if object > 0 { 1 } else { -1 },
            gt_object_id: object,
            voi_half: VOI_HALF,
        });
    }
    Ok(CandidateSet {
        candidates,
        source_volume: source_volume.to_string(),
        threshold_used,
    })
}

/// Fraction of ground-truth objects claimed by at least one candidate plus
/// the count of negative candidates for this case.
pub fn candgen_sensitivity(cs: &CandidateSet, gt_mask: &Volume<u16>) -> CandgenStats {
    let mut objects: BTreeSet<u16> = BTreeSet::new();
    for &v in gt_mask.data() {
        if v > 0 {
            objects.insert(v);
        }
    }
    let claimed: BTreeSet<u16> = cs
        .candidates
        .iter()
        .filter(|c| c.gt_object_id > 0)
        .map(|c| c.gt_object_id)
        .collect();
    let fp = cs.candidates.iter().filter(|c| c.label < 0).count();
    let sensitivity = if objects.is_empty() {
        1.0
    } else {
        claimed.intersection(&objects).count() as f64 / objects.len() as f64
    };
    CandgenStats { object_sensitivity: sensitivity, fp_per_case: fp }
}

/// Writes `patient_id,x,y,z,label,gt_object_id` rows with a header.
pub fn write_candidates_csv(cs: &CandidateSet, path: &Path) -> Result<(), CandgenError> {
    let mut out = String::from("patient_id,x,y,z,label,gt_object_id\n");
    for c in &cs.candidates {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.patient_id, c.centroid.x, c.centroid.y, c.centroid.z, c.label, c.gt_object_id
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|source| CandgenError::Io { path: path.to_path_buf(), source })
}

pub fn read_candidates_csv(path: &Path) -> Result<Vec<Candidate>, CandgenError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CandgenError::Io { path: path.to_path_buf(), source })?;
    let reader = std::io::BufReader::new(file);
    let mut candidates = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CandgenError::Io { path: path.to_path_buf(), source })?;
        if i == 0 {
            if line.trim() != "patient_id,x,y,z,label,gt_object_id" {
                return Err(CandgenError::BadCsv { line: 1, reason: "bad header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CandgenError::BadCsv { line: i + 1, reason: "expected 6 fields".into() });
        }
        let parse = |s: &str| -> Result<usize, CandgenError> {
            s.trim().parse().map_err(|_| CandgenError::BadCsv {
                line: i + 1,
                reason: format!("bad integer {s:?}"),
            })
        };
        candidates.push(Candidate {
            patient_id: fields[0].to_string(),
            centroid: VoxelIndex::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?),
            label: fields[4].trim().parse().map_err(|_| CandgenError::BadCsv {
                line: i + 1,
                reason: "bad label".into(),
            })?,
            gt_object_id: fields[5].trim().parse().map_err(|_| CandgenError::BadCsv {
                line: i + 1,
                reason: "bad object id".into(),
            })?,
        voi_half: VOI_HALF,
        });
    }
    Ok(candidates)
}
