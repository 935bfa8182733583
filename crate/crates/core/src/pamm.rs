//! Per-pixel window-model fit of cine intensity-time curves and the
//! segmental amplitude-to-time ratio.
//!
//! The model is `P(t) = A_b − A_v·g(t)` with `g` the indicator of the frame
//! interval `[T_on, T_off]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Grid2;
use crate::sectors::{Region, SectorMap, N_SEGMENTS};
use crate::volume::{CineSequence, Geometry, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum PammError {
    #[error("curve has {0} frames, at least 4 are needed")]
    TooShort(usize),
    #[error("empty fit region")]
    EmptyRegion,
    #[error("no segment has a valid pixel")]
    NoValidPixels,
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub const MIN_FRAMES: usize = 4;
pub const MIN_RELIABLE_PIXELS: usize = 5;

/// Window indicator on the closed frame interval.
pub fn window_g(t: usize, t_on: usize, t_off: usize) -> u8 {
    (t >= t_on && t <= t_off) as u8
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFit {
    pub a_b: f64,
    pub a_v: f64,
    /// `None` when the fit is invalid.
    pub window: Option<(usize, usize)>,
    pub sse: f64,
}

impl PixelFit {
    pub fn valid(&self) -> bool {
        self.window.is_some()
    }
}

/// Exhaustive least-squares fit over every window `T_on ≤ T_off` that
/// leaves at least one frame outside and darkens inside (`A_v > 0`); the
/// complement of a window fits the same curve with the opposite sign, so
/// the sign constraint is what makes the window unique. Ties go to the
/// shorter window, then the earlier onset. Curves with no darkening window
/// are reported invalid.
pub fn fit_pixel(curve: &[f64]) -> Result<PixelFit, PammError> {
    let n = curve.len();
    if n < MIN_FRAMES {
        return Err(PammError::TooShort(n));
    }
    let mut prefix = vec![0.0; n + 1];
    for (i, &v) in curve.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let total = prefix[n];
    let sum_sq: f64 = curve.iter().map(|v| v * v).sum();
    let scale = curve.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tie_eps = 1e-9 * sum_sq.max(f64::MIN_POSITIVE);

    let mut best: Option<(f64, usize, usize)> = None;
    for len in 1..n {
        for on in 0..=(n - len) {
            let off = on + len - 1;
            let s_in = prefix[off + 1] - prefix[on];
            let s_out = total - s_in;
            let n_in = len as f64;
            let n_out = (n - len) as f64;
            if s_out / n_out - s_in / n_in <= 1e-9 * scale {
                continue;
            }
            let sse = sum_sq - s_in * s_in / n_in - s_out * s_out / n_out;
            if best.is_none_or(|(b, _, _)| sse < b - tie_eps) {
                best = Some((sse, on, off));
            }
        }
    }
    let Some((_, on, off)) = best else {
        let mean = total / n as f64;
        let sse = curve.iter().map(|v| (v - mean).powi(2)).sum();
        return Ok(PixelFit { a_b: mean, a_v: 0.0, window: None, sse });
    };
    let n_in = (off - on + 1) as f64;
    let s_in = prefix[off + 1] - prefix[on];
    let a_b = (total - s_in) / (n as f64 - n_in);
    let a_v = a_b - s_in / n_in;
    let sse = curve.iter().enumerate().map(|(t, &v)| (v - (a_b - a_v * window_g(t, on, off) as f64)).powi(2)).sum();
    Ok(PixelFit { a_b, a_v, window: Some((on, off)), sse })
}

/// `((T_on + T_off)/2) / n_phases`.
pub fn mean_transition_time(t_on: usize, t_off: usize, n_phases: usize) -> f64 {
    (t_on + t_off) as f64 / 2.0 / n_phases as f64
}

/// Fitted parameters of every voxel; voxels outside the fit region or with
/// an invalid fit have `valid = false`, `A_v = 0` and times `−1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricMaps {
    pub geometry: Geometry,
    pub n_phases: usize,
    pub a_b: Vec<f32>,
    pub a_v: Vec<f32>,
    pub t_on: Vec<f32>,
    pub t_off: Vec<f32>,
    pub sse: Vec<f32>,
    pub valid: Vec<bool>,
}

impl ParametricMaps {
    pub fn volumes(&self) -> Result<[(&'static str, Volume); 5], PammError> {
        let g = &self.geometry;
        Ok([
            ("ab", Volume::new(g.clone(), self.a_b.clone())?),
            ("av", Volume::new(g.clone(), self.a_v.clone())?),
            ("ton", Volume::new(g.clone(), self.t_on.clone())?),
            ("toff", Volume::new(g.clone(), self.t_off.clone())?),
            ("sse", Volume::new(g.clone(), self.sse.clone())?),
        ])
    }

    /// Rebuilds maps from saved volumes (`valid ⇔ T_on ≥ 0`).
    pub fn from_volumes(ab: Volume, av: Volume, ton: Volume, toff: Volume, sse: Volume, n_phases: usize) -> Result<Self, PammError> {
        let g = ab.geometry().clone();
        for v in [&av, &ton, &toff, &sse] {
            if !v.geometry().same_grid(&g) {
                return Err(PammError::Shape("parametric maps are on different grids".into()));
            }
        }
        let valid = ton.data().iter().map(|&t| t >= 0.0).collect();
        Ok(ParametricMaps {
            geometry: g,
            n_phases,
            a_b: ab.into_data(),
            a_v: av.into_data(),
            t_on: ton.into_data(),
            t_off: toff.into_data(),
            sse: sse.into_data(),
            valid,
        })
    }
}

/// Fits every voxel flagged in `region` (one mask per slice, `None` for an
/// unfitted slice).
pub fn compute_maps(seq: &CineSequence, region: &[Option<Grid2<bool>>]) -> Result<ParametricMaps, PammError> {
    let g = seq.geometry().clone();
    let [nx, ny, nz] = g.dims;
    if region.len() != nz {
        return Err(PammError::Shape(format!("{} region masks for {nz} slices", region.len())));
    }
    for m in region.iter().flatten() {
        if m.width != nx || m.height != ny {
            return Err(PammError::Shape(format!("region mask {}x{} on a {nx}x{ny} grid", m.width, m.height)));
        }
    }
    let in_region = |idx: usize| {
        let k = idx / (nx * ny);
        let r = idx % (nx * ny);
        region[k].as_ref().is_some_and(|m| m.data[r])
    };
    if !(0..g.len()).any(in_region) {
        return Err(PammError::EmptyRegion);
    }
    let n_phases = seq.len();
    if n_phases < MIN_FRAMES {
        return Err(PammError::TooShort(n_phases));
    }
    let fits: Vec<Option<PixelFit>> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            if !in_region(idx) {
                return None;
            }
            let curve: Vec<f64> = seq.phases().iter().map(|p| p.data()[idx] as f64).collect();
            Some(fit_pixel(&curve).expect("frame count checked above"))
        })
        .collect();
    let mut maps = ParametricMaps {
        geometry: g.clone(),
        n_phases,
        a_b: vec![0.0; g.len()],
        a_v: vec![0.0; g.len()],
        t_on: vec![-1.0; g.len()],
        t_off: vec![-1.0; g.len()],
        sse: vec![0.0; g.len()],
        valid: vec![false; g.len()],
    };
    for (idx, f) in fits.into_iter().enumerate() {
        if let Some(f) = f {
            maps.a_b[idx] = f.a_b as f32;
            maps.a_v[idx] = f.a_v as f32;
            maps.sse[idx] = f.sse as f32;
            if let Some((on, off)) = f.window {
                maps.t_on[idx] = on as f32;
                maps.t_off[idx] = off as f32;
                maps.valid[idx] = true;
            }
        }
    }
    Ok(maps)
}

/// Cavity masks of a sector map, one per slice of `geometry`.
pub fn cavity_regions(sectors: &SectorMap) -> Vec<Option<Grid2<bool>>> {
    let nz = sectors.geometry.dims[2];
    let mut out = vec![None; nz];
    for s in &sectors.slices {
        let data = s.labels.data.iter().map(|&c| crate::sectors::Label::from_code(c).region == Region::Cavity).collect();
        out[s.slice] = Some(Grid2::from_vec(s.labels.width, s.labels.height, data));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFunction {
    pub segment: usize,
    pub pixel_count: usize,
    pub valid_pixels: usize,
    pub amplitude_index: Option<f64>,
    pub mean_transition_time: Option<f64>,
    pub atr: Option<f64>,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceFunction {
    pub slice: usize,
    pub segments: Vec<SegmentFunction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentalFunction {
    pub n_phases: usize,
    pub slices: Vec<SliceFunction>,
}

impl SegmentalFunction {
    pub fn get(&self, slice: usize, segment: usize) -> Option<&SegmentFunction> {
        self.slices.iter().find(|s| s.slice == slice)?.segments.iter().find(|s| s.segment == segment)
    }
}

/// Aggregates A_v/A_b and mean transition time over the valid cavity
/// pixels of each segment.
pub fn segmental_function(maps: &ParametricMaps, sectors: &SectorMap) -> Result<SegmentalFunction, PammError> {
    if !maps.geometry.same_grid(&sectors.geometry) {
        return Err(PammError::Shape("parametric maps and sector map are on different grids".into()));
    }
    let g = &maps.geometry;
    let mut any_valid = false;
    let slices = sectors
        .slices
        .iter()
        .map(|s| {
            let mut acc = [(0usize, 0usize, 0.0f64, 0.0f64); N_SEGMENTS];
            for y in 0..s.labels.height {
                for x in 0..s.labels.width {
                    let l = s.label(x, y);
                    if l.region != Region::Cavity {
                        continue;
                    }
                    let a = &mut acc[l.segment() as usize - 1];
                    a.0 += 1;
                    let idx = g.index(x, y, s.slice);
                    let ab = maps.a_b[idx] as f64;
                    if maps.valid[idx] && ab > 0.0 {
                        a.1 += 1;
                        a.2 += maps.a_v[idx] as f64 / ab;
                        a.3 += mean_transition_time(maps.t_on[idx] as usize, maps.t_off[idx] as usize, maps.n_phases);
                    }
                }
            }
            let segments = acc
                .iter()
                .enumerate()
                .map(|(i, &(count, valid, amp, mtt))| {
                    let (amplitude_index, mean_transition_time) = if valid > 0 { (Some(amp / valid as f64), Some(mtt / valid as f64)) } else { (None, None) };
                    let atr = match (amplitude_index, mean_transition_time) {
                        (Some(a), Some(t)) if t > 0.0 => Some(a / t),
                        _ => None,
                    };
                    any_valid |= valid > 0;
                    SegmentFunction {
                        segment: i + 1,
                        pixel_count: count,
                        valid_pixels: valid,
                        amplitude_index,
                        mean_transition_time,
                        atr,
                        reliable: valid >= MIN_RELIABLE_PIXELS,
                    }
                })
                .collect();
            SliceFunction { slice: s.slice, segments }
        })
        .collect();
    if !any_valid {
        return Err(PammError::NoValidPixels);
    }
    Ok(SegmentalFunction { n_phases: maps.n_phases, slices })
}
