//! Volumes, cine sequences and their on-disk container.
//!
//! A container is a JSON header (`*.mvol.json`) next to one raw payload of
//! little-endian `f32` samples per volume. Samples are stored z-major: the
//! slice index varies slowest, so a slice is one contiguous block of
//! `nx * ny` values with `x` varying fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DTYPE_F32LE: &str = "f32le";
const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("payload size mismatch: expected {expected} samples, found {found}")]
    Size { expected: usize, found: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("point ({0:.3}, {1:.3}, {2:.3}) lies outside the voxel grid")]
    OutOfBounds(f64, f64, f64),
    #[error("sequence error: {0}")]
    Sequence(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// Voxel grid geometry. `orientation` is row-major; its columns are the
/// world directions of the i, j and k voxel axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub orientation: [[f64; 3]; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let g = Geometry { dims, spacing, origin: [0.0; 3], orientation: IDENTITY };
        g.validate()?;
        Ok(g)
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_orientation(mut self, orientation: [[f64; 3]; 3]) -> Result<Self> {
        self.orientation = orientation;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(VolumeError::Geometry(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::Geometry(format!("spacing must be > 0, got {:?}", self.spacing)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::Geometry("origin must be finite".into()));
        }
        let m = &self.orientation;
        for a in 0..3 {
            for b in a..3 {
                let dot: f64 = (0..3).map(|r| m[r][a] * m[r][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOL {
                    return Err(VolumeError::Geometry(format!(
                        "orientation columns {a},{b} are not orthonormal (dot = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    /// `origin + orientation * diag(spacing) * ijk`
    pub fn voxel_to_world(&self, ijk: [f64; 3]) -> [f64; 3] {
        let scaled = [ijk[0] * self.spacing[0], ijk[1] * self.spacing[1], ijk[2] * self.spacing[2]];
        let m = &self.orientation;
        let mut out = self.origin;
        for (r, o) in out.iter_mut().enumerate() {
            *o += m[r][0] * scaled[0] + m[r][1] * scaled[1] + m[r][2] * scaled[2];
        }
        out
    }

    /// Inverse of [`Geometry::voxel_to_world`]; the orientation is orthonormal
    /// so its inverse is the transpose.
    pub fn world_to_voxel(&self, xyz: [f64; 3]) -> [f64; 3] {
        let d = [xyz[0] - self.origin[0], xyz[1] - self.origin[1], xyz[2] - self.origin[2]];
        let m = &self.orientation;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let proj = m[0][c] * d[0] + m[1][c] * d[1] + m[2][c] * d[2];
            *o = proj / self.spacing[c];
        }
        out
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self == other
    }
}

/// A 3D scalar grid with physical geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(VolumeError::Size { expected: geometry.len(), found: data.len() });
        }
        Ok(Volume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Result<Self> {
        let n = geometry.len();
        Volume::new(geometry, vec![value; n])
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }

    pub fn slice(&self, k: usize) -> &[f32] {
        let n = self.geometry.slice_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn voxel_to_world(&self, ijk: [f64; 3]) -> [f64; 3] {
        self.geometry.voxel_to_world(ijk)
    }

    pub fn world_to_voxel(&self, xyz: [f64; 3]) -> [f64; 3] {
        self.geometry.world_to_voxel(xyz)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        p.iter()
            .zip(self.geometry.dims.iter())
            .all(|(&c, &d)| c >= 0.0 && c <= (d - 1) as f64)
    }

    /// Trilinear blend of the 8 grid values around `p` (continuous voxel
    /// coordinates). Exact at grid nodes.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> Result<f64> {
        if !self.contains(p) {
            return Err(VolumeError::OutOfBounds(p[0], p[1], p[2]));
        }
        Ok(self.sample_unchecked(p))
    }

    /// Like [`Volume::sample_trilinear`] but clamps `p` onto the grid first.
    pub fn sample_clamped(&self, p: [f64; 3]) -> f64 {
        let d = self.geometry.dims;
        let q = [
            p[0].clamp(0.0, (d[0] - 1) as f64),
            p[1].clamp(0.0, (d[1] - 1) as f64),
            p[2].clamp(0.0, (d[2] - 1) as f64),
        ];
        self.sample_unchecked(q)
    }

    fn sample_unchecked(&self, p: [f64; 3]) -> f64 {
        let d = self.geometry.dims;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            if d[a] == 1 {
                continue;
            }
            let f = p[a].floor();
            let mut b = f as usize;
            let mut t = p[a] - f;
            if b >= d[a] - 1 {
                b = d[a] - 2;
                t = 1.0;
            }
            base[a] = b;
            frac[a] = t;
        }
        let step = [
            usize::from(d[0] > 1),
            usize::from(d[1] > 1),
            usize::from(d[2] > 1),
        ];
        let mut acc = 0.0;
        for corner in 0..8usize {
            let bit = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if bit[a] == 1 {
                    if step[a] == 0 {
                        w = 0.0;
                        break;
                    }
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
                idx[a] = base[a] + bit[a] * step[a];
            }
            if w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]) as f64;
            }
        }
        acc
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume {
        Volume { geometry: self.geometry.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Ordered cine phases sharing one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct CineSequence {
    phases: Vec<Volume>,
    trigger_times_ms: Vec<f64>,
    cycle_duration_ms: f64,
}

impl CineSequence {
    pub fn new(phases: Vec<Volume>, trigger_times_ms: Vec<f64>, cycle_duration_ms: f64) -> Result<Self> {
        if phases.len() < 2 {
            return Err(VolumeError::Sequence(format!("need >= 2 phases, got {}", phases.len())));
        }
        if phases.len() != trigger_times_ms.len() {
            return Err(VolumeError::Sequence("one trigger time per phase is required".into()));
        }
        if !(cycle_duration_ms > 0.0) {
            return Err(VolumeError::Sequence("cycle duration must be > 0".into()));
        }
        let g = phases[0].geometry();
        if phases.iter().any(|p| p.geometry() != g) {
            return Err(VolumeError::Sequence("all phases must share one geometry".into()));
        }
        for w in trigger_times_ms.windows(2) {
            if !(w[1] > w[0]) {
                return Err(VolumeError::Sequence("trigger times must be strictly increasing".into()));
            }
        }
        if trigger_times_ms.iter().any(|&t| !(0.0..cycle_duration_ms).contains(&t)) {
            return Err(VolumeError::Sequence("trigger times must lie in [0, cycle duration)".into()));
        }
        Ok(CineSequence { phases, trigger_times_ms, cycle_duration_ms })
    }

    pub fn phases(&self) -> &[Volume] {
        &self.phases
    }

    pub fn phase(&self, i: usize) -> &Volume {
        &self.phases[i]
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn trigger_times_ms(&self) -> &[f64] {
        &self.trigger_times_ms
    }

    pub fn cycle_duration_ms(&self) -> f64 {
        self.cycle_duration_ms
    }

    pub fn geometry(&self) -> &Geometry {
        self.phases[0].geometry()
    }
}

/// 1 to 3 delayed-enhancement exams.
#[derive(Clone, Debug, PartialEq)]
pub struct DEStudySet {
    pub exams: Vec<Volume>,
    pub acquisition_window_ms: f64,
}

impl DEStudySet {
    pub fn new(exams: Vec<Volume>, acquisition_window_ms: f64) -> Result<Self> {
        if exams.is_empty() || exams.len() > 3 {
            return Err(VolumeError::Sequence(format!("expected 1-3 DE exams, got {}", exams.len())));
        }
        if !(acquisition_window_ms > 0.0) {
            return Err(VolumeError::Sequence("acquisition window must be > 0 ms".into()));
        }
        Ok(DEStudySet { exams, acquisition_window_ms })
    }
}

#[derive(Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    orientation: [f64; 9],
    dtype: String,
    payload: String,
}

#[derive(Serialize, Deserialize)]
struct CineHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    orientation: [f64; 9],
    dtype: String,
    payloads: Vec<String>,
    trigger_times_ms: Vec<f64>,
    rr_ms: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> VolumeError {
    VolumeError::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// `dir/name.mvol.json` → `name`.
pub fn container_stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".mvol.json")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(&name)
        .to_string()
}

fn flatten_orientation(m: &[[f64; 3]; 3]) -> [f64; 9] {
    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
}

fn unflatten_orientation(o: &[f64; 9]) -> [[f64; 3]; 3] {
    [[o[0], o[1], o[2]], [o[3], o[4], o[5]], [o[6], o[7], o[8]]]
}

fn header_geometry(
    path: &Path,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    orientation: &[f64; 9],
    dtype: &str,
) -> Result<Geometry> {
    if dtype != DTYPE_F32LE {
        return Err(format_err(path, format!("unsupported dtype {dtype:?}")));
    }
    let g = Geometry { dims, spacing, origin, orientation: unflatten_orientation(orientation) };
    g.validate()?;
    Ok(g)
}

fn read_payload(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(VolumeError::Size { expected, found: bytes.len() / 4 });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn encode_payload(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Either kind of container, told apart by the header.
#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    Volume(Volume),
    Cine(CineSequence),
}

impl Stored {
    pub fn geometry(&self) -> &Geometry {
        match self {
            Stored::Volume(v) => v.geometry(),
            Stored::Cine(c) => c.geometry(),
        }
    }

    pub fn n_phases(&self) -> usize {
        match self {
            Stored::Volume(_) => 1,
            Stored::Cine(c) => c.len(),
        }
    }

    /// Phase `t` of a cine, or the volume itself.
    pub fn phase(&self, t: usize) -> Option<&Volume> {
        match self {
            Stored::Volume(v) => (t == 0).then_some(v),
            Stored::Cine(c) => c.phases().get(t),
        }
    }
}

pub fn load_any(path: &Path) -> Result<Stored> {
    let raw: serde_json::Value = read_header(path)?;
    if raw.get("payloads").is_some() {
        load_cine(path).map(Stored::Cine)
    } else {
        load_volume(path).map(Stored::Volume)
    }
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let h: VolumeHeader = read_header(path)?;
    let g = header_geometry(path, h.dims, h.spacing_mm, h.origin_mm, &h.orientation, &h.dtype)?;
    let payload = parent_dir(path).join(&h.payload);
    let data = read_payload(&payload, g.len())?;
    Volume::new(g, data)
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let payload = format!("{}.bin", container_stem(path));
    let g = v.geometry();
    let h = VolumeHeader {
        dims: g.dims,
        spacing_mm: g.spacing,
        origin_mm: g.origin,
        orientation: flatten_orientation(&g.orientation),
        dtype: DTYPE_F32LE.into(),
        payload: payload.clone(),
    };
    let dir = parent_dir(path);
    let payload_path = dir.join(payload);
    write_atomic(&payload_path, &encode_payload(v.data())).map_err(io_err(&payload_path))?;
    let text = serde_json::to_string_pretty(&h).expect("header serializes");
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

pub fn load_cine(path: &Path) -> Result<CineSequence> {
    let h: CineHeader = read_header(path)?;
    let g = header_geometry(path, h.dims, h.spacing_mm, h.origin_mm, &h.orientation, &h.dtype)?;
    let dir = parent_dir(path);
    let phases = h
        .payloads
        .iter()
        .map(|p| Volume::new(g.clone(), read_payload(&dir.join(p), g.len())?))
        .collect::<Result<Vec<_>>>()?;
    CineSequence::new(phases, h.trigger_times_ms, h.rr_ms)
}

pub fn save_cine(seq: &CineSequence, path: &Path) -> Result<()> {
    let stem = container_stem(path);
    let dir = parent_dir(path);
    let g = seq.geometry();
    let mut payloads = Vec::with_capacity(seq.len());
    for (i, phase) in seq.phases().iter().enumerate() {
        let name = format!("{stem}.phase{i:03}.bin");
        let p = dir.join(&name);
        write_atomic(&p, &encode_payload(phase.data())).map_err(io_err(&p))?;
        payloads.push(name);
    }
    let h = CineHeader {
        dims: g.dims,
        spacing_mm: g.spacing,
        origin_mm: g.origin,
        orientation: flatten_orientation(&g.orientation),
        dtype: DTYPE_F32LE.into(),
        payloads,
        trigger_times_ms: seq.trigger_times_ms().to_vec(),
        rr_ms: seq.cycle_duration_ms(),
    };
    let text = serde_json::to_string_pretty(&h).expect("header serializes");
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}
