//! Synthetic short-axis studies with exact ground truth.
//!
//! The left ventricle is a stack of concentric annuli; the endocardial
//! radius of each of the six segments follows the window contraction model,
//! the right-ventricular blood pool sits on the septal side, and the DE
//! exams carry wedge scars and a known rigid misalignment. Intensities are
//! rendered with 4×4 supersampling of the analytic tissue map, then
//! Gaussian noise is added from a seeded generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{circle, Point};
use crate::mie::{score_for_fraction, ScoreGrid, SliceScores};
use crate::registration::RigidTransform;
use crate::sectors::{relative_angle_deg, screen_angle_deg, N_SEGMENTS, N_SUB_SEGMENTS, SUB_SEGMENT_DEG};
use crate::segmentation::{SeedConfig, SliceSeeds};
use crate::stats::Contraction;
use crate::sync::{DEFAULT_WINDOW_LEN_MS, DEFAULT_WINDOW_START_MS};
use crate::volume::{CineSequence, DEStudySet, Geometry, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

pub const CINE_BLOOD: f64 = 200.0;
pub const CINE_MYOCARDIUM: f64 = 80.0;
pub const CINE_BACKGROUND: f64 = 35.0;
pub const DE_HEALTHY: f64 = 100.0;
pub const DE_BLOOD: f64 = 150.0;
pub const DE_BACKGROUND: f64 = 40.0;
pub const AIR: f64 = 0.0;

/// Contraction of one angular segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMotion {
    pub tier: Contraction,
    /// Inward endocardial excursion during the window, in mm.
    pub amplitude_mm: f64,
    /// Window start and end as fractions of the cycle.
    pub t_on: f64,
    pub t_off: f64,
}

impl SegmentMotion {
    pub fn for_tier(tier: Contraction) -> SegmentMotion {
        match tier {
            Contraction::N => SegmentMotion { tier, amplitude_mm: 5.0, t_on: 0.06, t_off: 0.24 },
            Contraction::H => SegmentMotion { tier, amplitude_mm: 2.5, t_on: 0.10, t_off: 0.28 },
            Contraction::AD => SegmentMotion { tier, amplitude_mm: 0.0, t_on: 0.10, t_off: 0.28 },
        }
    }
}

/// Enhanced wedge from the endocardium to `fraction` of the wall, over the
/// sector angles `[start_deg, end_deg)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScarSpec {
    pub start_deg: f64,
    pub end_deg: f64,
    pub fraction: f64,
}

impl ScarSpec {
    pub fn covers(&self, angle_deg: f64) -> bool {
        let span = self.end_deg - self.start_deg;
        (angle_deg - self.start_deg).rem_euclid(360.0) < span
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// LV axis position in pixels.
    pub center_px: Point,
    /// End-diastolic endocardial radius at the first and last slice.
    pub endo_radius_mm: [f64; 2],
    pub wall_mm: f64,
    /// RV radius relative to the epicardial radius.
    pub rv_radius_ratio: f64,
    /// Screen angle of the RV center seen from the LV axis.
    pub rv_angle_deg: f64,
    pub body_center_px: Point,
    pub body_semi_axes_mm: [f64; 2],
    pub segments: Vec<SegmentMotion>,
    pub n_phases: usize,
    pub rr_ms: f64,
    pub scars: Vec<ScarSpec>,
    pub contrast_ratio: f64,
    /// One injected misalignment per DE exam.
    pub misalignments: Vec<RigidTransform>,
    pub cine_noise: f64,
    pub de_noise: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        use Contraction::*;
        PhantomSpec {
            dims: [112, 112, 12],
            spacing_mm: [1.0, 1.0, 8.0],
            center_px: Point::new(62.0, 56.0),
            endo_radius_mm: [18.0, 11.0],
            wall_mm: 10.0,
            rv_radius_ratio: 0.85,
            rv_angle_deg: 195.0,
            body_center_px: Point::new(56.0, 58.0),
            body_semi_axes_mm: [52.0, 46.0],
            segments: [AD, H, N, N, H, AD].into_iter().map(SegmentMotion::for_tier).collect(),
            n_phases: 30,
            rr_ms: 1000.0,
            scars: vec![
                ScarSpec { start_deg: 0.0, end_deg: 60.0, fraction: 0.9 },
                ScarSpec { start_deg: 60.0, end_deg: 100.0, fraction: 0.4 },
                ScarSpec { start_deg: 180.0, end_deg: 200.0, fraction: 0.2 },
                ScarSpec { start_deg: 300.0, end_deg: 360.0, fraction: 0.6 },
            ],
            contrast_ratio: 3.0,
            misalignments: vec![
                RigidTransform { tx_mm: 2.0, ty_mm: -1.5, theta_deg: 3.0, dz_slices: 0 },
                RigidTransform { tx_mm: -3.0, ty_mm: 2.5, theta_deg: -2.0, dz_slices: 1 },
                RigidTransform { tx_mm: 1.0, ty_mm: 3.5, theta_deg: 1.5, dz_slices: -1 },
            ],
            cine_noise: 2.0,
            de_noise: 8.0,
            seed: 7,
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Tissue classes of the analytic phantom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tissue {
    Air,
    Background,
    Blood,
    Myocardium,
    Scar,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PhantomError::Spec(m.into()));
        if self.dims.contains(&0) {
            return bad("dims must be positive");
        }
        if self.spacing_mm[0] != self.spacing_mm[1] || !(self.spacing_mm[0] > 0.0) || !(self.spacing_mm[2] > 0.0) {
            return bad("in-plane spacing must be square and positive");
        }
        if self.endo_radius_mm.iter().any(|&r| !(r > 0.0)) || !(self.wall_mm > 0.0) {
            return bad("radii and wall thickness must be > 0");
        }
        if self.segments.len() != N_SEGMENTS {
            return bad("exactly six segment motions are required");
        }
        for s in &self.segments {
            if !(0.0..=1.0).contains(&s.t_on) || !(0.0..=1.0).contains(&s.t_off) || s.t_on > s.t_off {
                return bad("segment windows need 0 <= t_on <= t_off <= 1");
            }
            if s.amplitude_mm < 0.0 || s.amplitude_mm >= self.endo_radius_mm[0].min(self.endo_radius_mm[1]) {
                return bad("segment amplitude must be in [0, endo radius)");
            }
        }
        for sc in &self.scars {
            if !(0.0..=1.0).contains(&sc.fraction) || !(sc.end_deg > sc.start_deg) || sc.end_deg - sc.start_deg > 360.0 {
                return bad("scars need 0 <= fraction <= 1 and 0 < span <= 360");
            }
        }
        if self.n_phases < 4 || !(self.rr_ms > 0.0) {
            return bad("need >= 4 phases and rr_ms > 0");
        }
        if self.misalignments.is_empty() || self.misalignments.len() > 3 {
            return bad("one to three DE exams");
        }
        for t in &self.misalignments {
            t.validate().map_err(|e| PhantomError::Spec(e.to_string()))?;
        }
        if !(self.cine_noise >= 0.0) || !(self.de_noise >= 0.0) || !(self.contrast_ratio > 0.0) {
            return bad("noise must be >= 0 and contrast ratio > 0");
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Ok(Geometry::new(self.dims, self.spacing_mm)?)
    }

    fn px(&self, mm: f64) -> f64 {
        mm / self.spacing_mm[0]
    }

    /// End-diastolic endocardial radius of slice `k`, in mm.
    pub fn endo_ed_mm(&self, k: usize) -> f64 {
        let nz = self.dims[2];
        let t = if nz > 1 { k as f64 / (nz - 1) as f64 } else { 0.0 };
        self.endo_radius_mm[0] + (self.endo_radius_mm[1] - self.endo_radius_mm[0]) * t
    }

    pub fn epi_mm(&self, k: usize) -> f64 {
        self.endo_ed_mm(k) + self.wall_mm
    }

    /// RV center and radius in pixels.
    pub fn rv_px(&self, k: usize) -> (Point, f64) {
        let epi = self.px(self.epi_mm(k));
        let r = self.rv_radius_ratio * epi;
        let d = epi + 0.3 * r;
        let a = self.rv_angle_deg.to_radians();
        (self.center_px + Point::new(a.cos(), a.sin()) * d, r)
    }

    /// Anterior RV insertion: the upper intersection of the RV and
    /// epicardial circles.
    pub fn p1(&self, k: usize) -> Point {
        let c0 = self.center_px;
        let r0 = self.px(self.epi_mm(k));
        let (c1, r1) = self.rv_px(k);
        let d = c1.dist(c0);
        let a = (r0 * r0 - r1 * r1 + d * d) / (2.0 * d);
        let h = (r0 * r0 - a * a).max(0.0).sqrt();
        let u = (c1 - c0) * (1.0 / d);
        let base = c0 + u * a;
        let perp = Point::new(-u.y, u.x);
        let (p, q) = (base + perp * h, base - perp * h);
        if p.y < q.y {
            p
        } else {
            q
        }
    }

    /// Screen angle of the sector reference ray of slice `k`.
    pub fn reference_deg(&self, k: usize) -> f64 {
        screen_angle_deg(self.p1(k) - self.center_px)
    }

    /// Window frames `[on, off]` of segment `seg` (0-based).
    pub fn window_frames(&self, seg: usize) -> (usize, usize) {
        let s = &self.segments[seg];
        let n = self.n_phases as f64;
        let on = (s.t_on * n).round() as usize;
        let off = ((s.t_off * n).round() as usize).max(on).min(self.n_phases - 1);
        (on.min(off), off)
    }

    /// Endocardial radius in mm of slice `k` at `phase`, for sector angle
    /// `angle_deg`.
    pub fn endo_mm(&self, k: usize, phase: usize, angle_deg: f64) -> f64 {
        let seg = ((angle_deg / 60.0).floor() as usize).min(N_SEGMENTS - 1);
        let (on, off) = self.window_frames(seg);
        let g = (phase >= on && phase <= off) as u8 as f64;
        self.endo_ed_mm(k) - self.segments[seg].amplitude_mm * g
    }

    fn in_body(&self, p: Point) -> bool {
        let d = p - self.body_center_px;
        let (a, b) = (self.px(self.body_semi_axes_mm[0]), self.px(self.body_semi_axes_mm[1]));
        (d.x / a).powi(2) + (d.y / b).powi(2) <= 1.0
    }

    /// Tissue at pixel position `p` of anatomical slice `k`. `phase = None`
    /// renders the end-diastolic geometry with scars.
    fn tissue(&self, k: usize, phase: Option<usize>, p: Point) -> Tissue {
        let r = p.dist(self.center_px);
        let epi = self.px(self.epi_mm(k));
        let angle = relative_angle_deg(p, self.center_px, self.reference_deg(k));
        if r <= epi {
            let endo_mm = match phase {
                Some(t) => self.endo_mm(k, t, angle),
                None => self.endo_ed_mm(k),
            };
            let endo = self.px(endo_mm);
            if r < endo {
                return Tissue::Blood;
            }
            if phase.is_none() {
                let depth = (r - endo) / (epi - endo);
                if self.scars.iter().any(|s| s.covers(angle) && depth < s.fraction) {
                    return Tissue::Scar;
                }
            }
            return Tissue::Myocardium;
        }
        let (rv_c, rv_r) = self.rv_px(k);
        if p.dist(rv_c) <= rv_r {
            return Tissue::Blood;
        }
        if self.in_body(p) {
            Tissue::Background
        } else {
            Tissue::Air
        }
    }

    fn cine_value(t: Tissue) -> f64 {
        match t {
            Tissue::Air => AIR,
            Tissue::Background => CINE_BACKGROUND,
            Tissue::Blood => CINE_BLOOD,
            Tissue::Myocardium | Tissue::Scar => CINE_MYOCARDIUM,
        }
    }

    fn de_value(&self, t: Tissue) -> f64 {
        match t {
            Tissue::Air => AIR,
            Tissue::Background => DE_BACKGROUND,
            Tissue::Blood => DE_BLOOD,
            Tissue::Myocardium => DE_HEALTHY,
            Tissue::Scar => DE_HEALTHY * self.contrast_ratio,
        }
    }
}

/// Area-averaged value of `f` over pixel `(i, j)`. Pixels whose center and
/// corners agree are taken as uniform.
fn render_pixel(i: usize, j: usize, f: &impl Fn(Point) -> f64) -> f64 {
    let c = Point::new(i as f64, j as f64);
    let v = f(c);
    let corners = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)];
    if corners.iter().all(|&(dx, dy)| f(c + Point::new(dx, dy)) == v) {
        return v;
    }
    let n = SUPERSAMPLE;
    let mut acc = 0.0;
    for sy in 0..n {
        for sx in 0..n {
            let off = Point::new((sx as f64 + 0.5) / n as f64 - 0.5, (sy as f64 + 0.5) / n as f64 - 0.5);
            acc += f(c + off);
        }
    }
    acc / (n * n) as f64
}

fn add_noise(data: &mut [f32], sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma).expect("sigma > 0");
    for v in data.iter_mut() {
        *v = (*v as f64 + rng.sample(dist)) as f32;
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Noiseless cine phase `phase`.
pub fn render_cine_phase(spec: &PhantomSpec, phase: usize) -> Result<Volume> {
    let g = spec.geometry()?;
    let [nx, ny, nz] = spec.dims;
    let data: Vec<f32> = (0..nz * ny)
        .into_par_iter()
        .flat_map_iter(|row| {
            let (k, j) = (row / ny, row % ny);
            (0..nx).map(move |i| render_pixel(i, j, &|p| PhantomSpec::cine_value(spec.tissue(k, Some(phase), p))) as f32)
        })
        .collect();
    Ok(Volume::new(g, data)?)
}

pub fn make_cine(spec: &PhantomSpec) -> Result<CineSequence> {
    spec.validate()?;
    let phases: Result<Vec<Volume>> = (0..spec.n_phases)
        .map(|t| {
            let v = render_cine_phase(spec, t)?;
            let g = v.geometry().clone();
            let mut data = v.into_data();
            add_noise(&mut data, spec.cine_noise, stream_seed(spec.seed, t as u64));
            Ok(Volume::new(g, data)?)
        })
        .collect();
    let times = (0..spec.n_phases).map(|i| i as f64 * spec.rr_ms / spec.n_phases as f64).collect();
    Ok(CineSequence::new(phases?, times, spec.rr_ms)?)
}

/// The registration center the misalignments are expressed about.
pub fn registration_center(spec: &PhantomSpec) -> Point {
    spec.center_px
}

/// One DE exam seen through misalignment `t` (so registering it back
/// should recover `t`), with noise `sigma` from stream `seed`.
pub fn render_de_exam(spec: &PhantomSpec, t: &RigidTransform, sigma: f64, seed: u64) -> Result<Volume> {
    let g = spec.geometry()?;
    let [nx, ny, nz] = spec.dims;
    let inv = t.inverse();
    let center = registration_center(spec);
    let spacing = [spec.spacing_mm[0], spec.spacing_mm[1]];
    let mut data: Vec<f32> = (0..nz * ny)
        .into_par_iter()
        .flat_map_iter(|row| {
            let (k, j) = (row / ny, row % ny);
            let ka = (k as i64 - t.dz_slices as i64).clamp(0, nz as i64 - 1) as usize;
            (0..nx).map(move |i| {
                render_pixel(i, j, &|q| {
                    let p = inv.map_pixel(q, center, spacing);
                    spec.de_value(spec.tissue(ka, None, p))
                }) as f32
            })
        })
        .collect();
    add_noise(&mut data, sigma, seed);
    Ok(Volume::new(g, data)?)
}

pub fn make_de(spec: &PhantomSpec) -> Result<DEStudySet> {
    spec.validate()?;
    let exams: Result<Vec<Volume>> = spec
        .misalignments
        .iter()
        .enumerate()
        .map(|(e, t)| render_de_exam(spec, t, spec.de_noise, stream_seed(spec.seed, 1000 + e as u64)))
        .collect();
    Ok(DEStudySet::new(exams?, DEFAULT_WINDOW_LEN_MS)?)
}

/// Operator seeds at the LV axis and the anterior RV insertion.
pub fn seeds(spec: &PhantomSpec) -> SeedConfig {
    SeedConfig { slices: (0..spec.dims[2]).map(|k| SliceSeeds::new(k, spec.center_px, spec.p1(k))).collect() }
}

/// Transmural scar fraction of sub-segment `sub` (1-based), weighted by the
/// angular share of each scar.
pub fn sub_segment_fraction(spec: &PhantomSpec, sub: usize) -> f64 {
    let lo = (sub - 1) as f64 * SUB_SEGMENT_DEG;
    // Fine angular quadrature of the deepest scar at each angle.
    let n = 200;
    let mut acc = 0.0;
    for i in 0..n {
        let a = lo + (i as f64 + 0.5) * SUB_SEGMENT_DEG / n as f64;
        acc += spec.scars.iter().filter(|s| s.covers(a)).map(|s| s.fraction).fold(0.0, f64::max);
    }
    acc / n as f64
}

/// Ground-truth scores, identical on every slice.
pub fn truth_scores(spec: &PhantomSpec) -> ScoreGrid {
    let mut subs = [0u8; N_SUB_SEGMENTS];
    for (i, s) in subs.iter_mut().enumerate() {
        *s = score_for_fraction(sub_segment_fraction(spec, i + 1));
    }
    ScoreGrid { slices: (0..spec.dims[2]).map(|k| SliceScores { slice: Some(k), sub_segments: subs }).collect() }
}

/// Exact contour of slice `k`: the epicardium, or the endocardium at
/// `phase`, sampled at `n` equal angles.
pub fn truth_contour(spec: &PhantomSpec, k: usize, phase: usize, epi: bool, n: usize) -> Vec<Point> {
    if epi {
        return circle(spec.center_px, spec.px(spec.epi_mm(k)), n);
    }
    let reference = spec.reference_deg(k);
    (0..n)
        .map(|i| {
            let a = 360.0 * i as f64 / n as f64;
            let rel = (a - reference).rem_euclid(360.0);
            let r = spec.px(spec.endo_mm(k, phase, rel));
            spec.center_px + Point::new(a.to_radians().cos(), a.to_radians().sin()) * r
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceLabels {
    pub slice: usize,
    pub segments: Vec<Contraction>,
}

/// Wall-motion class of every segment of every slice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractionLabels {
    pub slices: Vec<SliceLabels>,
}

impl ContractionLabels {
    pub fn get(&self, slice: usize, segment: usize) -> Option<Contraction> {
        self.slices.iter().find(|s| s.slice == slice)?.segments.get(segment.checked_sub(1)?).copied()
    }
}

pub fn contraction_labels(spec: &PhantomSpec) -> ContractionLabels {
    ContractionLabels {
        slices: (0..spec.dims[2]).map(|k| SliceLabels { slice: k, segments: spec.segments.iter().map(|s| s.tier).collect() }).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceTruth {
    pub slice: usize,
    pub endo_ed_mm: f64,
    pub epi_mm: f64,
    pub p1: Point,
    pub reference_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub segment: usize,
    pub motion: SegmentMotion,
    pub on_frame: usize,
    pub off_frame: usize,
}

/// Everything the generator knows, as written next to the volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub spec: PhantomSpec,
    pub center_px: Point,
    /// Rotation center of the injected misalignments.
    pub registration_center: Point,
    pub slices: Vec<SliceTruth>,
    pub segments: Vec<SegmentTruth>,
    pub transforms: Vec<RigidTransform>,
    pub scores: ScoreGrid,
    pub de_window_start_ms: f64,
    pub de_window_len_ms: f64,
}

pub fn truth(spec: &PhantomSpec) -> PhantomTruth {
    PhantomTruth {
        spec: spec.clone(),
        center_px: spec.center_px,
        registration_center: registration_center(spec),
        slices: (0..spec.dims[2])
            .map(|k| SliceTruth { slice: k, endo_ed_mm: spec.endo_ed_mm(k), epi_mm: spec.epi_mm(k), p1: spec.p1(k), reference_deg: spec.reference_deg(k) })
            .collect(),
        segments: (0..N_SEGMENTS)
            .map(|s| {
                let (on, off) = spec.window_frames(s);
                SegmentTruth { segment: s + 1, motion: spec.segments[s], on_frame: on, off_frame: off }
            })
            .collect(),
        transforms: spec.misalignments.clone(),
        scores: truth_scores(spec),
        de_window_start_ms: DEFAULT_WINDOW_START_MS,
        de_window_len_ms: DEFAULT_WINDOW_LEN_MS,
    }
}
