//! Refined rigid DE → cine registration about the heart.
//!
//! The moving (DE) volume is pulled through an in-plane rigid map: for a
//! fixed-image voxel `x` in slice `k` the moving image is sampled at
//! `R(θ)(x − c) + c + t` in slice `k + dz`, where `c` is the ROI center and
//! rotation/translation act in millimetres. Similarity is normalized mutual
//! information over a joint histogram, and Powell's method minimizes
//! `exp(−NMI)` independently for every slice shift `dz ∈ {−1, 0, +1}`.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::optimize::{powell_minimize, OptimizeError, PowellOptions};
use crate::sync::Resampled;
use crate::volume::{Geometry, Volume, VolumeError};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_ROI_FACTOR: f64 = 2.4;
pub const MAX_ABS_THETA_DEG: f64 = 45.0;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("no ROI voxel maps inside the moving volume")]
    EmptyOverlap,
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("volumes must share one grid (got {0:?} and {1:?})")]
    GridMismatch([usize; 3], [usize; 3]),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid ROI: {0}")]
    InvalidRoi(String),
    #[error("invalid option: {0}")]
    Options(String),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, RegistrationError>;

/// In-plane rigid motion plus an integer slice shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub tx_mm: f64,
    pub ty_mm: f64,
    pub theta_deg: f64,
    pub dz_slices: i32,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { tx_mm: 0.0, ty_mm: 0.0, theta_deg: 0.0, dz_slices: 0 };

    pub fn new(tx_mm: f64, ty_mm: f64, theta_deg: f64, dz_slices: i32) -> Result<Self> {
        let t = RigidTransform { tx_mm, ty_mm, theta_deg, dz_slices };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1..=1).contains(&self.dz_slices) {
            return Err(RegistrationError::InvalidTransform(format!("dz must be in {{-1,0,1}}, got {}", self.dz_slices)));
        }
        if !(self.theta_deg.abs() < MAX_ABS_THETA_DEG) || !self.tx_mm.is_finite() || !self.ty_mm.is_finite() {
            return Err(RegistrationError::InvalidTransform(format!("{self:?}")));
        }
        Ok(())
    }

    /// The transform whose pull undoes this one.
    pub fn inverse(&self) -> RigidTransform {
        let t = Point::new(self.tx_mm, self.ty_mm).rotate_deg(-self.theta_deg);
        RigidTransform { tx_mm: -t.x, ty_mm: -t.y, theta_deg: -self.theta_deg, dz_slices: -self.dz_slices }
    }

    /// Maps a fixed-image pixel position to the moving-image pixel position.
    #[inline]
    pub fn map_pixel(&self, p: Point, center: Point, spacing: [f64; 2]) -> Point {
        let (s, c) = self.theta_deg.to_radians().sin_cos();
        in_plane(p, center, spacing, c, s, self.tx_mm, self.ty_mm)
    }
}

#[inline]
fn in_plane(p: Point, center: Point, spacing: [f64; 2], cos: f64, sin: f64, tx: f64, ty: f64) -> Point {
    let dx = (p.x - center.x) * spacing[0];
    let dy = (p.y - center.y) * spacing[1];
    Point::new(
        center.x + (cos * dx - sin * dy + tx) / spacing[0],
        center.y + (sin * dx + cos * dy + ty) / spacing[1],
    )
}

/// What the `register` stage writes per exam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    #[serde(flatten)]
    pub transform: RigidTransform,
    pub cost: f64,
}

/// Pixel box `[x0, x1) × [y0, y1)` over slices `[z0, z1)`, with the
/// rotation center used for registration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
    pub center: Point,
}

impl RoiBox {
    pub fn full(dims: [usize; 3]) -> RoiBox {
        RoiBox {
            x0: 0,
            y0: 0,
            x1: dims[0],
            y1: dims[1],
            z0: 0,
            z1: dims[2],
            center: Point::new((dims[0] - 1) as f64 / 2.0, (dims[1] - 1) as f64 / 2.0),
        }
    }

    /// Square box of side `side` centered on `center`, clamped to the image.
    pub fn square(center: Point, side: f64, dims: [usize; 3]) -> Result<RoiBox> {
        if !(side > 0.0) {
            return Err(RegistrationError::InvalidRoi(format!("side must be > 0, got {side}")));
        }
        let half = side / 2.0;
        let clamp = |v: f64, n: usize| v.round().clamp(0.0, n as f64) as usize;
        let roi = RoiBox {
            x0: clamp(center.x - half, dims[0]),
            y0: clamp(center.y - half, dims[1]),
            x1: clamp(center.x + half + 1.0, dims[0]),
            y1: clamp(center.y + half + 1.0, dims[1]),
            z0: 0,
            z1: dims[2],
            center,
        };
        if roi.x1 <= roi.x0 || roi.y1 <= roi.y0 {
            return Err(RegistrationError::InvalidRoi("box lies outside the image".into()));
        }
        Ok(roi)
    }

    /// Enlarges the segmentation ROI (side `3·|P0P1|`, centered on `P0`) by
    /// `factor`.
    pub fn from_seeds(p0: Point, p1: Point, factor: f64, dims: [usize; 3]) -> Result<RoiBox> {
        if !(factor > 0.0) {
            return Err(RegistrationError::InvalidRoi(format!("factor must be > 0, got {factor}")));
        }
        RoiBox::square(p0, 3.0 * p0.dist(p1) * factor, dims)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Joint intensity histogram; rows index the fixed image, columns the moving one.
#[derive(Clone, Debug, PartialEq)]
pub struct JointHistogram {
    pub bins: usize,
    pub counts: Vec<u64>,
    pub samples: u64,
}

impl JointHistogram {
    pub fn from_counts(bins: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), bins * bins);
        let samples = counts.iter().sum();
        JointHistogram { bins, counts, samples }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.bins + col]
    }

    pub fn transpose(&self) -> JointHistogram {
        let b = self.bins;
        let mut t = vec![0; b * b];
        for r in 0..b {
            for c in 0..b {
                t[c * b + r] = self.counts[r * b + c];
            }
        }
        JointHistogram { bins: b, counts: t, samples: self.samples }
    }
}

fn check_grids(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(RegistrationError::GridMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

#[inline]
fn bilinear_in_slice(slice: &[f32], nx: usize, ny: usize, p: Point) -> Option<f64> {
    let (x, y) = (p.x, p.y);
    let xmax = (nx - 1) as f64;
    let ymax = (ny - 1) as f64;
    if !(x >= 0.0 && x <= xmax && y >= 0.0 && y <= ymax) {
        return None;
    }
    let x0 = if nx > 1 { (x.floor() as usize).min(nx - 2) } else { 0 };
    let y0 = if ny > 1 { (y.floor() as usize).min(ny - 2) } else { 0 };
    let tx = x - x0 as f64;
    let ty = y - y0 as f64;
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let v = |i: usize, j: usize| slice[j * nx + i] as f64;
    let top = v(x0, y0) * (1.0 - tx) + v(x1, y0) * tx;
    let bot = v(x0, y1) * (1.0 - tx) + v(x1, y1) * tx;
    Some(top * (1.0 - ty) + bot * ty)
}

/// Collects (fixed, moving) intensity pairs over the ROI.
fn sample_pairs(a: &Volume, b: &Volume, roi: &RoiBox, t: &RigidTransform) -> Vec<(f64, f64)> {
    let [nx, ny, nz] = a.dims();
    let g = a.geometry();
    let spacing = [g.spacing[0], g.spacing[1]];
    let (s, c) = t.theta_deg.to_radians().sin_cos();
    let mut out = Vec::with_capacity(roi.width() * roi.height() * (roi.z1 - roi.z0));
    for k in roi.z0..roi.z1.min(nz) {
        let km = k as i64 + t.dz_slices as i64;
        if km < 0 || km >= nz as i64 {
            continue;
        }
        let fixed = a.slice(k);
        let moving = b.slice(km as usize);
        for j in roi.y0..roi.y1.min(ny) {
            for i in roi.x0..roi.x1.min(nx) {
                let q = in_plane(Point::new(i as f64, j as f64), roi.center, spacing, c, s, t.tx_mm, t.ty_mm);
                if let Some(mv) = bilinear_in_slice(moving, nx, ny, q) {
                    out.push((fixed[j * nx + i] as f64, mv));
                }
            }
        }
    }
    out
}

#[inline]
fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

fn histogram_from_pairs(pairs: &[(f64, f64)], bins: usize) -> JointHistogram {
    let (mut alo, mut ahi, mut blo, mut bhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pairs {
        alo = alo.min(x);
        ahi = ahi.max(x);
        blo = blo.min(y);
        bhi = bhi.max(y);
    }
    let mut counts = vec![0u64; bins * bins];
    for &(x, y) in pairs {
        counts[bin_of(x, alo, ahi, bins) * bins + bin_of(y, blo, bhi, bins)] += 1;
    }
    JointHistogram { bins, counts, samples: pairs.len() as u64 }
}

/// Joint histogram of `a` (rows) against `b` pulled through `t` (columns).
/// Each image is binned linearly over its own min–max across the overlap.
pub fn joint_histogram(a: &Volume, b: &Volume, roi: &RoiBox, t: &RigidTransform, bins: usize) -> Result<JointHistogram> {
    if bins < 2 {
        return Err(RegistrationError::TooFewBins(bins));
    }
    check_grids(a, b)?;
    let pairs = sample_pairs(a, b, roi, t);
    if pairs.is_empty() {
        return Err(RegistrationError::EmptyOverlap);
    }
    Ok(histogram_from_pairs(&pairs, bins))
}

fn entropy(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Marginal and joint Shannon entropies (nats).
pub fn entropies(h: &JointHistogram) -> (f64, f64, f64) {
    let b = h.bins;
    let total = h.samples as f64;
    let rows = (0..b).map(|r| (0..b).map(|c| h.get(r, c)).sum::<u64>());
    let cols = (0..b).map(|c| (0..b).map(|r| h.get(r, c)).sum::<u64>());
    (entropy(rows, total), entropy(cols, total), entropy(h.counts.iter().copied(), total))
}

/// `(H(I) + H(J)) / H(I, J)`; a single occupied cell gives 1.
pub fn nmi(h: &JointHistogram) -> Result<f64> {
    if h.samples == 0 {
        return Err(RegistrationError::EmptyOverlap);
    }
    let (hr, hc, hj) = entropies(h);
    if hj <= 0.0 {
        debug!("joint entropy is zero; NMI taken as 1");
        return Ok(1.0);
    }
    Ok((hr + hc) / hj)
}

/// `exp(−NMI)`.
pub fn cost(a: &Volume, b: &Volume, roi: &RoiBox, t: &RigidTransform, bins: usize) -> Result<f64> {
    Ok((-nmi(&joint_histogram(a, b, roi, t, bins)?)?).exp())
}

/// Pulls `v` through `t` about `center`: rotation then translation
/// in-plane, slice `k` of the output reads slice `k + dz` of the input.
pub fn apply_transform(v: &Volume, t: &RigidTransform, center: Point) -> Result<Resampled> {
    let g: &Geometry = v.geometry();
    let [nx, ny, nz] = g.dims;
    let spacing = [g.spacing[0], g.spacing[1]];
    let (s, c) = t.theta_deg.to_radians().sin_cos();
    let n = nx * ny;
    let mut data = vec![0.0f32; g.len()];
    let mut overlap = vec![false; g.len()];
    data.par_chunks_mut(n).zip(overlap.par_chunks_mut(n)).enumerate().for_each(|(k, (out, mask))| {
        let km = k as i64 + t.dz_slices as i64;
        if km < 0 || km >= nz as i64 {
            return;
        }
        let src = v.slice(km as usize);
        for j in 0..ny {
            for i in 0..nx {
                let q = in_plane(Point::new(i as f64, j as f64), center, spacing, c, s, t.tx_mm, t.ty_mm);
                if let Some(val) = bilinear_in_slice(src, nx, ny, q) {
                    out[j * nx + i] = val as f32;
                    mask[j * nx + i] = true;
                }
            }
        }
    });
    Ok(Resampled { volume: Volume::new(g.clone(), data)?, overlap })
}

#[derive(Clone, Debug)]
pub struct RegistrationOptions {
    pub bins: usize,
    pub powell: PowellOptions,
    /// In-plane Gaussian sigma applied to both volumes before matching, in
    /// pixels; 0 disables it. Interpolation blurs the moving image at every
    /// non-grid offset, which makes NMI peak at whole-pixel shifts and zero
    /// rotation; blurring both inputs first removes most of that bias. It
    /// also keeps noise well below the bin width, where the 100-bin
    /// estimate turns jagged.
    pub presmooth_px: f64,
    /// Sigma of an optional first pass whose result seeds the final one.
    /// The heavier blur leaves one broad basin, which keeps the final
    /// search out of the shallow noise minima of strongly noisy exams.
    pub coarse_presmooth_px: Option<f64>,
}

pub const DEFAULT_PRESMOOTH_PX: f64 = 2.0;
pub const DEFAULT_COARSE_PRESMOOTH_PX: f64 = 4.0;

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions {
            bins: DEFAULT_BINS,
            powell: PowellOptions { line_tol: 1e-3, ..PowellOptions::default() },
            presmooth_px: DEFAULT_PRESMOOTH_PX,
            coarse_presmooth_px: Some(DEFAULT_COARSE_PRESMOOTH_PX),
        }
    }
}

/// Separable in-plane Gaussian blur with replicated borders.
pub fn smooth_in_plane(v: &Volume, sigma_px: f64) -> Volume {
    if !(sigma_px > 0.0) {
        return v.clone();
    }
    let radius = (3.0 * sigma_px).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma_px * sigma_px)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let [nx, ny, _] = v.dims();
    let mut data = v.data().to_vec();
    data.par_chunks_mut(nx * ny).for_each(|s| {
        let mut tmp = vec![0.0f64; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = 0.0;
                for (w, d) in kernel.iter().zip(-radius..=radius) {
                    let x = (i as i64 + d).clamp(0, nx as i64 - 1) as usize;
                    acc += w * s[j * nx + x] as f64;
                }
                tmp[j * nx + i] = acc / norm;
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = 0.0;
                for (w, d) in kernel.iter().zip(-radius..=radius) {
                    let y = (j as i64 + d).clamp(0, ny as i64 - 1) as usize;
                    acc += w * tmp[y * nx + i];
                }
                s[j * nx + i] = (acc / norm) as f32;
            }
        }
    });
    Volume::new(v.geometry().clone(), data).expect("same geometry")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub cost: f64,
    /// Best transform and cost for each explored slice shift.
    pub branches: Vec<(RigidTransform, f64)>,
}

impl RegistrationResult {
    pub fn record(&self) -> TransformRecord {
        TransformRecord { transform: self.transform, cost: self.cost }
    }
}

fn branch(de: &Volume, cine: &Volume, roi: &RoiBox, start: RigidTransform, opts: &RegistrationOptions) -> Result<Option<(RigidTransform, f64)>> {
    let dz = start.dz_slices;
    match joint_histogram(cine, de, roi, &start, opts.bins) {
        Err(RegistrationError::EmptyOverlap) => return Ok(None),
        Err(e) => return Err(e),
        Ok(_) => {}
    }
    let objective = |p: &[f64]| {
        let t = RigidTransform { tx_mm: p[0], ty_mm: p[1], theta_deg: p[2], dz_slices: dz };
        if !(t.theta_deg.abs() < MAX_ABS_THETA_DEG) {
            return 1.0;
        }
        match joint_histogram(cine, de, roi, &t, opts.bins).and_then(|h| nmi(&h)) {
            Ok(v) => (-v).exp(),
            // No overlap is the worst possible alignment.
            Err(_) => 1.0,
        }
    };
    let r = powell_minimize(objective, &[start.tx_mm, start.ty_mm, start.theta_deg], &opts.powell)?;
    debug!("dz {dz}: cost {:.6} after {} cycles / {} evaluations", r.f, r.cycles, r.evaluations);
    Ok(Some((RigidTransform { tx_mm: r.x[0], ty_mm: r.x[1], theta_deg: r.x[2], dz_slices: dz }, r.f)))
}

fn lexicographic(a: &RigidTransform, b: &RigidTransform) -> std::cmp::Ordering {
    a.dz_slices
        .cmp(&b.dz_slices)
        .then(a.tx_mm.total_cmp(&b.tx_mm))
        .then(a.ty_mm.total_cmp(&b.ty_mm))
        .then(a.theta_deg.total_cmp(&b.theta_deg))
}

/// Registers the scan-aligned DE volume onto the averaged cine volume.
pub fn register(de_aligned: &Volume, cine_avg: &Volume, roi: &RoiBox, opts: &RegistrationOptions) -> Result<RegistrationResult> {
    check_grids(cine_avg, de_aligned)?;
    if !(opts.presmooth_px >= 0.0) {
        return Err(RegistrationError::Options(format!("presmooth sigma must be >= 0, got {}", opts.presmooth_px)));
    }
    if let Some(c) = opts.coarse_presmooth_px {
        if !(c >= 0.0) {
            return Err(RegistrationError::Options(format!("coarse presmooth sigma must be >= 0, got {c}")));
        }
    }
    let starts: Vec<RigidTransform> = [-1, 0, 1].iter().map(|&dz| RigidTransform { dz_slices: dz, ..RigidTransform::IDENTITY }).collect();
    let run = |sigma: f64, starts: &[RigidTransform]| -> Result<Vec<(RigidTransform, f64)>> {
        let (de, cine) = (smooth_in_plane(de_aligned, sigma), smooth_in_plane(cine_avg, sigma));
        let results: Vec<Result<Option<(RigidTransform, f64)>>> = starts.par_iter().map(|&s| branch(&de, &cine, roi, s, opts)).collect();
        let mut out = Vec::new();
        for r in results {
            if let Some(b) = r? {
                out.push(b);
            }
        }
        Ok(out)
    };
    let starts = match opts.coarse_presmooth_px {
        Some(c) => run(c, &starts)?.into_iter().map(|b| b.0).collect(),
        None => starts,
    };
    let branches = run(opts.presmooth_px, &starts)?;
    let best = branches
        .iter()
        .min_by(|(ta, ca), (tb, cb)| {
            ca.total_cmp(cb)
                .then(ta.dz_slices.abs().cmp(&tb.dz_slices.abs()))
                .then(lexicographic(ta, tb))
        })
        .copied()
        .ok_or(RegistrationError::EmptyOverlap)?;
    Ok(RegistrationResult { transform: best.0, cost: best.1, branches })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(nx: usize, ny: usize, nz: usize, f: impl FnMut(usize, usize, usize) -> f32) -> Volume {
        Volume::from_fn(Geometry::new([nx, ny, nz], [1.0, 1.0, 1.0]).unwrap(), f).unwrap()
    }

    #[test]
    fn identical_images_diagonal_histogram() {
        let a = vol(10, 10, 2, |i, j, k| ((i * 7 + j * 3 + k) % 11) as f32);
        let roi = RoiBox::full(a.dims());
        let h = joint_histogram(&a, &a, &roi, &RigidTransform::IDENTITY, 10).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                if r != c {
                    assert_eq!(h.get(r, c), 0);
                }
            }
        }
        assert_eq!(h.samples, 200);
        assert!((nmi(&h).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_moving_image() {
        let a = vol(8, 8, 1, |i, j, _| (i + j) as f32);
        let b = vol(8, 8, 1, |_, _, _| 5.0);
        let h = joint_histogram(&a, &b, &RoiBox::full(a.dims()), &RigidTransform::IDENTITY, 16).unwrap();
        for r in 0..16 {
            for c in 1..16 {
                assert_eq!(h.get(r, c), 0);
            }
        }
        assert!((nmi(&h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independence_and_single_cell() {
        let h = JointHistogram::from_counts(2, vec![1, 1, 1, 1]);
        assert!((nmi(&h).unwrap() - 1.0).abs() < 1e-12);
        let single = JointHistogram::from_counts(2, vec![0, 5, 0, 0]);
        assert_eq!(nmi(&single).unwrap(), 1.0);
        assert!(nmi(&JointHistogram::from_counts(2, vec![0; 4])).is_err());
    }

    #[test]
    fn cost_values() {
        let a = vol(6, 6, 1, |i, j, _| (i * 6 + j) as f32);
        let c = cost(&a, &a, &RoiBox::full(a.dims()), &RigidTransform::IDENTITY, 100).unwrap();
        assert!((c - (-2.0f64).exp()).abs() < 1e-6);
        assert!(((-1.0f64).exp() - 0.367879).abs() < 1e-6);
        assert!(((-1.5f64).exp() - 0.223130).abs() < 1e-6);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let a = vol(4, 4, 1, |i, _, _| i as f32);
        let t = RigidTransform { tx_mm: 100.0, ..RigidTransform::IDENTITY };
        assert!(matches!(joint_histogram(&a, &a, &RoiBox::full(a.dims()), &t, 4), Err(RegistrationError::EmptyOverlap)));
        assert!(matches!(joint_histogram(&a, &a, &RoiBox::full(a.dims()), &RigidTransform::IDENTITY, 1), Err(RegistrationError::TooFewBins(1))));
    }

    #[test]
    fn dz_shift_copies_slices() {
        let a = vol(5, 4, 3, |i, j, k| (i + 5 * j + 20 * k) as f32);
        let t = RigidTransform { dz_slices: 1, ..RigidTransform::IDENTITY };
        let out = apply_transform(&a, &t, Point::new(2.0, 1.5)).unwrap();
        assert_eq!(out.volume.slice(0), a.slice(1));
        assert_eq!(out.volume.slice(1), a.slice(2));
        assert!(out.volume.slice(2).iter().all(|&v| v == 0.0));
        assert!(!out.overlap[a.geometry().index(0, 0, 2)]);
    }

    #[test]
    fn identity_apply() {
        let a = vol(6, 5, 2, |i, j, k| (i * j + k) as f32);
        let out = apply_transform(&a, &RigidTransform::IDENTITY, Point::new(2.5, 2.0)).unwrap();
        assert_eq!(out.volume, a);
        assert!(out.overlap.iter().all(|&b| b));
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform { tx_mm: 2.0, ty_mm: -1.0, theta_deg: 7.0, dz_slices: 1 };
        let inv = t.inverse();
        let c = Point::new(10.0, 12.0);
        let p = Point::new(3.0, 4.0);
        let q = t.map_pixel(inv.map_pixel(p, c, [1.2, 1.2]), c, [1.2, 1.2]);
        assert!(q.dist(p) < 1e-12);
        assert_eq!(inv.dz_slices, -1);
    }

    #[test]
    fn transform_validation_and_json() {
        assert!(RigidTransform::new(0.0, 0.0, 0.0, 2).is_err());
        assert!(RigidTransform::new(0.0, 0.0, 50.0, 0).is_err());
        let rec = TransformRecord { transform: RigidTransform::new(1.0, 2.0, 0.5, -1).unwrap(), cost: 0.2 };
        let v: serde_json::Value = serde_json::to_value(rec).unwrap();
        for key in ["tx_mm", "ty_mm", "theta_deg", "dz_slices", "cost"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn roi_from_seeds_clamps() {
        let roi = RoiBox::from_seeds(Point::new(50.0, 50.0), Point::new(60.0, 50.0), 2.0, [100, 100, 4]).unwrap();
        assert_eq!((roi.x0, roi.x1), (20, 81));
        let big = RoiBox::from_seeds(Point::new(50.0, 50.0), Point::new(80.0, 50.0), 2.8, [100, 100, 4]).unwrap();
        assert_eq!((big.x0, big.y0, big.x1, big.y1), (0, 0, 100, 100));
        assert_eq!(big.center, Point::new(50.0, 50.0));
    }
}
