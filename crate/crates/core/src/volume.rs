//! 3D scalar volumes with physical spacing, plus the VAGG-VOL file format.
//!
//! A [`Volume`] is an immutable dense grid stored x-fastest (linear index
//! `x + nx*(y + ny*z)`). Images and probability maps use `f32` elements,
//! label masks use `u16` (0 = background). Volumes are not mutated after
//! construction, so sharing them across threads is safe.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("data length {got} does not match dims {dims:?} ({want} voxels)")]
    DataLength { dims: [usize; 3], want: usize, got: usize },
    #[error("spacing must be strictly positive, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("volume dims {dims:?} cannot hold a {window}^3 window")]
    WindowTooLarge { dims: [usize; 3], window: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("header declares dtype {header} but {requested} was requested")]
    DtypeMismatch { header: String, requested: String },
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// An in-bounds voxel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelIndex {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelIndex {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }
}

/// Element types storable in a VAGG-VOL payload.
pub trait VoxelElement: Copy + Default + PartialEq + Send + Sync + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl VoxelElement for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl VoxelElement for u16 {
    const DTYPE: &'static str = "u16";
    const BYTES: usize = 2;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u16::from_le_bytes([bytes[0], bytes[1]])
    }
}

/// Dense 3D grid with millimeter spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<T>) -> Result<Self, VolumeError> {
        let want = dims[0] * dims[1] * dims[2];
        if data.len() != want {
            return Err(VolumeError::DataLength { dims, want, got: data.len() });
        }
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: T) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self { dims, spacing, data: vec![value; n] }
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, spacing: check_spacing(spacing), data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Linear index of (x, y, z); x varies fastest.
    #[inline]
    pub fn index_of(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index_of(x, y, z)]
    }

    #[inline]
    pub fn get(&self, idx: VoxelIndex) -> T {
        self.at(idx.x, idx.y, idx.z)
    }

    pub fn contains(&self, idx: VoxelIndex) -> bool {
        idx.x < self.dims[0] && idx.y < self.dims[1] && idx.z < self.dims[2]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Volume<U> {
        Volume { dims: self.dims, spacing: self.spacing, data: self.data.iter().copied().map(f).collect() }
    }

    /// Cube crop of side `2*half + 1` centered at `center`.
    ///
    /// A window reaching past the border is shifted inward so the crop lies
    /// fully inside the volume; it is never padded. Errors if the volume is
    /// smaller than the window in any dimension.
    pub fn crop_window(&self, center: VoxelIndex, half: usize) -> Result<Volume<T>, VolumeError> {
        let window = 2 * half + 1;
        if self.dims.iter().any(|&d| d < window) {
            return Err(VolumeError::WindowTooLarge { dims: self.dims, window });
        }
        let lo = [
            clamp_window_start(center.x, half, self.dims[0], window),
            clamp_window_start(center.y, half, self.dims[1], window),
            clamp_window_start(center.z, half, self.dims[2], window),
        ];
        let mut data = Vec::with_capacity(window * window * window);
        for z in 0..window {
            for y in 0..window {
                let row = self.index_of(lo[0], lo[1] + y, lo[2] + z);
                data.extend_from_slice(&self.data[row..row + window]);
            }
        }
        Ok(Volume { dims: [window; 3], spacing: self.spacing, data })
    }

    /// The window start produced by [`Self::crop_window`]'s border clamping.
    pub fn clamped_window_center(&self, center: VoxelIndex, half: usize) -> VoxelIndex {
        let window = 2 * half + 1;
        VoxelIndex::new(
            clamp_window_start(center.x, half, self.dims[0], window) + half,
            clamp_window_start(center.y, half, self.dims[1], window) + half,
            clamp_window_start(center.z, half, self.dims[2], window) + half,
        )
    }
}

fn check_spacing(spacing: [f32; 3]) -> [f32; 3] {
    assert!(spacing.iter().all(|s| *s > 0.0), "spacing must be positive");
    spacing
}

fn clamp_window_start(center: usize, half: usize, dim: usize, window: usize) -> usize {
    let start = center.saturating_sub(half);
    start.min(dim - window)
}

// ---------------------------------------------------------------------------
// VAGG-VOL I/O
//
// Header (UTF-8 text, one item per line):
//   VAGG-VOL 1
//   dims <nx> <ny> <nz>
//   spacing <sx> <sy> <sz>
//   dtype f32|u16
//   data <relative raw path>
// The raw payload is little-endian, x-fastest.
// ---------------------------------------------------------------------------

const MAGIC: &str = "VAGG-VOL 1";

/// Writes `v` as a VAGG-VOL header at `path` plus a sibling `.raw` payload.
pub fn save_volume<T: VoxelElement>(v: &Volume<T>, path: &Path) -> Result<(), VolumeError> {
    let raw_name = raw_file_name(path);
    let raw_path = path.with_file_name(&raw_name);

    let d = v.dims();
    let s = v.spacing();
    let header = format!(
        "{MAGIC}\ndims {} {} {}\nspacing {} {} {}\ndtype {}\ndata {}\n",
        d[0], d[1], d[2], s[0], s[1], s[2], T::DTYPE, raw_name
    );

    let mut payload = Vec::with_capacity(v.len() * T::BYTES);
    for value in v.data() {
        value.write_le(&mut payload);
    }

    write_bytes(path, header.as_bytes())?;
    write_bytes(&raw_path, &payload)
}

/// Loads a VAGG-VOL volume, checking the header dtype against `T`.
pub fn load_volume<T: VoxelElement>(path: &Path) -> Result<Volume<T>, VolumeError> {
    let header = fs::read_to_string(path)
        .map_err(|source| VolumeError::Io { path: path.to_path_buf(), source })?;
    let parsed = parse_header(&header)?;
    if parsed.dtype != T::DTYPE {
        return Err(VolumeError::DtypeMismatch {
            header: parsed.dtype,
            requested: T::DTYPE.to_string(),
        });
    }
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&parsed.data);
    let payload = fs::read(&raw_path)
        .map_err(|source| VolumeError::Io { path: raw_path.clone(), source })?;

    let n = parsed.dims[0] * parsed.dims[1] * parsed.dims[2];
    let expected = n * T::BYTES;
    if payload.len() != expected {
        return Err(VolumeError::PayloadSize { expected, found: payload.len() });
    }
    let data: Vec<T> = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Volume::new(parsed.dims, parsed.spacing, data)
}

/// Reads only the dtype string of a VAGG-VOL header.
pub fn peek_dtype(path: &Path) -> Result<String, VolumeError> {
    let header = fs::read_to_string(path)
        .map_err(|source| VolumeError::Io { path: path.to_path_buf(), source })?;
    Ok(parse_header(&header)?.dtype)
}

struct Header {
    dims: [usize; 3],
    spacing: [f32; 3],
    dtype: String,
    data: String,
}

fn parse_header(text: &str) -> Result<Header, VolumeError> {
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or("");
    if magic.trim() != MAGIC {
        return Err(VolumeError::MalformedHeader(format!(
            "expected magic line {MAGIC:?}, found {magic:?}"
        )));
    }
    let mut dims = None;
    let mut spacing = None;
    let mut dtype = None;
    let mut data = None;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(' ')
            .ok_or_else(|| VolumeError::MalformedHeader(format!("bad line {line:?}")))?;
        match key {
            "dims" => {
                let v = parse_triple::<usize>(rest)
                    .ok_or_else(|| VolumeError::MalformedHeader(format!("bad dims {rest:?}")))?;
                if v.iter().any(|&d| d == 0) {
                    return Err(VolumeError::MalformedHeader("dims must be positive".into()));
                }
                dims = Some(v);
            }
            "spacing" => {
                let v = parse_triple::<f32>(rest)
                    .ok_or_else(|| VolumeError::MalformedHeader(format!("bad spacing {rest:?}")))?;
                if v.iter().any(|s| !(*s > 0.0)) {
                    return Err(VolumeError::BadSpacing(v));
                }
                spacing = Some(v);
            }
            "dtype" => {
                let d = rest.trim();
                if d != "f32" && d != "u16" {
                    return Err(VolumeError::UnknownDtype(d.to_string()));
                }
                dtype = Some(d.to_string());
            }
            "data" => data = Some(rest.trim().to_string()),
            other => {
                return Err(VolumeError::MalformedHeader(format!("unknown key {other:?}")));
            }
        }
    }
    Ok(Header {
        dims: dims.ok_or_else(|| VolumeError::MalformedHeader("missing dims".into()))?,
        spacing: spacing.ok_or_else(|| VolumeError::MalformedHeader("missing spacing".into()))?,
        dtype: dtype.ok_or_else(|| VolumeError::MalformedHeader("missing dtype".into()))?,
        data: data.ok_or_else(|| VolumeError::MalformedHeader("missing data".into()))?,
    })
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Option<[T; 3]> {
    let mut it = s.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    let c = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some([a, b, c])
}

fn raw_file_name(header_path: &Path) -> String {
    let stem = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".to_string());
    format!("{stem}.raw")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), VolumeError> {
    let mut f = fs::File::create(path)
        .map_err(|source| VolumeError::Io { path: path.to_path_buf(), source })?;
    f.write_all(bytes)
        .map_err(|source| VolumeError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_volume(dims: [usize; 3]) -> Volume<f32> {
        Volume::from_fn(dims, [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as f32)
    }

    #[test]
    fn linear_index_is_x_fastest() {
        let v = ramp_volume([4, 3, 2]);
        assert_eq!(v.index_of(1, 2, 1), 1 + 4 * (2 + 3 * 1));
        assert_eq!(v.at(1, 2, 1), 1.0 + 20.0 + 100.0);
    }

    #[test]
    fn new_rejects_wrong_length_and_bad_spacing() {
        assert!(matches!(
            Volume::new([4, 4, 4], [1.0; 3], vec![0f32; 63]),
            Err(VolumeError::DataLength { .. })
        ));
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0, 0.0, 1.0], vec![0f32; 8]),
            Err(VolumeError::BadSpacing(_))
        ));
    }

    #[test]
    fn crop_interior_is_centered() {
        let v = ramp_volume([128, 128, 128]);
        let c = VoxelIndex::new(64, 60, 70);
        let crop = v.crop_window(c, 22).unwrap();
        assert_eq!(crop.dims(), [45, 45, 45]);
        assert_eq!(crop.at(22, 22, 22), v.get(c));
    }

    #[test]
    fn crop_half_zero_is_single_voxel() {
        let v = ramp_volume([8, 8, 8]);
        let crop = v.crop_window(VoxelIndex::new(3, 4, 5), 0).unwrap();
        assert_eq!(crop.dims(), [1, 1, 1]);
        assert_eq!(crop.data()[0], v.at(3, 4, 5));
    }

    #[test]
    fn crop_at_origin_shifts_inward() {
        let v = ramp_volume([128, 128, 128]);
        let crop = v.crop_window(VoxelIndex::new(0, 0, 0), 22).unwrap();
        assert_eq!(crop.dims(), [45, 45, 45]);
        // spans [0,44]^3
        assert_eq!(crop.at(0, 0, 0), v.at(0, 0, 0));
        assert_eq!(crop.at(44, 44, 44), v.at(44, 44, 44));
        assert_eq!(
            v.clamped_window_center(VoxelIndex::new(0, 0, 0), 22),
            VoxelIndex::new(22, 22, 22)
        );
    }

    #[test]
    fn crop_too_large_errors() {
        let v = ramp_volume([10, 50, 50]);
        assert!(matches!(
            v.crop_window(VoxelIndex::new(5, 25, 25), 22),
            Err(VolumeError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip_f32_bitexact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol.vaggvol");
        let v = Volume::from_fn([5, 4, 3], [0.8, 0.8, 1.0], |x, y, z| {
            (x as f32 * 0.37 + y as f32 * 1.13 - z as f32 * 2.7).sin()
        });
        save_volume(&v, &path).unwrap();
        let back: Volume<f32> = load_volume(&path).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), [0.8, 0.8, 1.0]);
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn save_load_roundtrip_mask_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.vaggvol");
        let v = Volume::from_fn([6, 6, 6], [1.0; 3], |x, _, _| (x % 3) as u16);
        save_volume(&v, &path).unwrap();
        let back: Volume<u16> = load_volume(&path).unwrap();
        assert_eq!(back.data(), v.data());
        assert_eq!(peek_dtype(&path).unwrap(), "u16");
    }

    #[test]
    fn load_header_size_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vaggvol");
        fs::write(
            &path,
            "VAGG-VOL 1\ndims 4 4 4\nspacing 1 1 1\ndtype f32\ndata v.raw\n",
        )
        .unwrap();
        fs::write(dir.path().join("v.raw"), vec![0u8; 256]).unwrap();
        let v: Volume<f32> = load_volume(&path).unwrap();
        assert_eq!(v.len(), 64);

        fs::write(dir.path().join("v.raw"), vec![0u8; 255]).unwrap();
        assert!(matches!(
            load_volume::<f32>(&path),
            Err(VolumeError::PayloadSize { expected: 256, found: 255 })
        ));
    }

    #[test]
    fn load_rejects_bad_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vaggvol");
        fs::write(&path, "NOT-A-VOL\n").unwrap();
        assert!(matches!(load_volume::<f32>(&path), Err(VolumeError::MalformedHeader(_))));

        fs::write(&path, "VAGG-VOL 1\ndims 4 4 4\nspacing 1 1 1\ndtype i64\ndata v.raw\n").unwrap();
        assert!(matches!(load_volume::<f32>(&path), Err(VolumeError::UnknownDtype(_))));

        fs::write(&path, "VAGG-VOL 1\ndims 4 4 4\nspacing 1 1 1\ndtype u16\ndata v.raw\n").unwrap();
        assert!(matches!(load_volume::<f32>(&path), Err(VolumeError::DtypeMismatch { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_identity(
            nx in 1usize..8, ny in 1usize..8, nz in 1usize..8,
            sx in 0.1f32..4.0, seed in 0u64..1000
        ) {
            let dims = [nx, ny, nz];
            let mut state = seed;
            let v = Volume::from_fn(dims, [sx, 1.0, 1.25], |_, _, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 40) as f32 / 100.0
            });
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.vaggvol");
            save_volume(&v, &path).unwrap();
            let back: Volume<f32> = load_volume(&path).unwrap();
            prop_assert_eq!(back.dims(), v.dims());
            prop_assert_eq!(back.spacing(), v.spacing());
            prop_assert_eq!(back.data(), v.data());
        }

        #[test]
        fn crop_dims_exact(cx in 0usize..30, cy in 0usize..30, cz in 0usize..30, half in 0usize..15) {
            let v = ramp_volume([31, 31, 31]);
            let crop = v.crop_window(VoxelIndex::new(cx, cy, cz), half).unwrap();
            let w = 2 * half + 1;
            prop_assert_eq!(crop.dims(), [w, w, w]);
        }
    }
}
