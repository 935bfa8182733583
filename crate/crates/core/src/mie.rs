//! Infarct extent scoring: fuzzy c-means enhancement detection, sequential
//! layer scoring and fusion over repeated DE exams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sectors::{Region, SectorMap, SliceSectors, N_LAYERS, N_SEGMENTS, N_SUB_SEGMENTS};
use crate::volume::Volume;

#[derive(Debug, Error, PartialEq)]
pub enum MieError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("score grid shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Input(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcmOptions {
    pub c: usize,
    pub m: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FcmOptions {
    fn default() -> Self {
        FcmOptions { c: 2, m: 2.0, tol: 1e-5, max_iters: 200 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcmResult {
    pub centers: Vec<f64>,
    /// Row-major `n × c`.
    pub memberships: Vec<f64>,
    pub enhanced_cluster: usize,
    pub iterations: usize,
}

impl FcmResult {
    pub fn membership(&self, i: usize, k: usize) -> f64 {
        self.memberships[i * self.centers.len() + k]
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn update_memberships(x: &[f64], centers: &[f64], m: f64, u: &mut [f64]) {
    let c = centers.len();
    let e = 2.0 / (m - 1.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut u[i * c..(i + 1) * c];
        if let Some(hit) = centers.iter().position(|&v| v == xi) {
            row.iter_mut().enumerate().for_each(|(k, r)| *r = (k == hit) as u8 as f64);
            continue;
        }
        for k in 0..c {
            let dk = (xi - centers[k]).abs();
            let s: f64 = centers.iter().map(|&cj| (dk / (xi - cj).abs()).powf(e)).sum();
            row[k] = 1.0 / s;
        }
    }
}

fn update_centers(x: &[f64], u: &[f64], c: usize, m: f64) -> Vec<f64> {
    (0..c)
        .map(|k| {
            let (mut num, mut den) = (0.0, 0.0);
            for (i, &xi) in x.iter().enumerate() {
                let w = u[i * c + k].powf(m);
                num += w * xi;
                den += w;
            }
            num / den
        })
        .collect()
}

/// Fuzzy c-means on scalar data, started from evenly spaced percentiles.
pub fn fcm(x: &[f64], opts: &FcmOptions) -> Result<FcmResult, MieError> {
    let c = opts.c;
    if c < 2 || !(opts.m > 1.0) {
        return Err(MieError::Degenerate("fcm needs c >= 2 and m > 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MieError::Degenerate("non-finite intensity".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < c {
        return Err(MieError::Degenerate(format!("{} distinct values for {c} clusters", distinct.len())));
    }
    let mut centers: Vec<f64> = (0..c).map(|i| percentile_sorted(&sorted, (i as f64 + 0.5) / c as f64)).collect();
    let mut uniq = centers.clone();
    uniq.dedup();
    if uniq.len() < c {
        // Heavily tied data; fall back to evenly spaced order statistics of
        // the distinct values.
        centers = (0..c).map(|i| percentile_sorted(&distinct, i as f64 / (c - 1) as f64)).collect();
    }
    let mut u = vec![0.0; x.len() * c];
    let mut iterations = 0;
    loop {
        update_memberships(x, &centers, opts.m, &mut u);
        iterations += 1;
        let next = update_centers(x, &u, c, opts.m);
        let shift = next.iter().zip(&centers).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        centers = next;
        if shift < opts.tol || iterations >= opts.max_iters {
            break;
        }
    }
    update_memberships(x, &centers, opts.m, &mut u);
    let enhanced_cluster = (0..c).max_by(|&a, &b| centers[a].total_cmp(&centers[b])).unwrap_or(0);
    Ok(FcmResult { centers, memberships: u, enhanced_cluster, iterations })
}

/// Per-pixel enhancement decision with the FCM run used to make it.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhancement {
    pub enhanced: Vec<bool>,
    pub fcm: FcmResult,
    /// The clusters were judged to be one tissue class; nothing is enhanced.
    pub all_healthy: bool,
}

/// Clusters with centers closer than this fraction of the IQR are merged.
pub const GUARD_IQR_FRACTION: f64 = 0.10;
/// Clusters with centers closer than this many lower-cluster standard
/// deviations are merged.
pub const GUARD_SD_MULTIPLE: f64 = 4.0;

/// Two-class FCM over `x`; a value is enhanced when its membership to the
/// brighter cluster exceeds 0.5, unless the all-healthy guard fires.
pub fn classify_enhanced(x: &[f64], opts: &FcmOptions) -> Result<Enhancement, MieError> {
    if x.is_empty() {
        return Err(MieError::Degenerate("empty myocardium mask".into()));
    }
    let opts = FcmOptions { c: 2, ..opts.clone() };
    let r = fcm(x, &opts)?;
    let hi = r.enhanced_cluster;
    let lo = 1 - hi;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25);
    let gap = r.centers[hi] - r.centers[lo];
    let (mut w_sum, mut w_var) = (0.0, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let w = r.membership(i, lo).powf(opts.m);
        w_sum += w;
        w_var += w * (xi - r.centers[lo]).powi(2);
    }
    let sd_lo = if w_sum > 0.0 { (w_var / w_sum).sqrt() } else { 0.0 };
    let all_healthy = gap < GUARD_IQR_FRACTION * iqr || gap < GUARD_SD_MULTIPLE * sd_lo;
    let enhanced = if all_healthy { vec![false; x.len()] } else { (0..x.len()).map(|i| r.membership(i, hi) > 0.5).collect() };
    Ok(Enhancement { enhanced, fcm: r, all_healthy })
}

/// Sequential layer score: walk from the endocardium, count enhanced
/// layers, stop at the first healthy one.
pub fn score_layers(enhanced: &[bool]) -> u8 {
    enhanced.iter().take_while(|&&e| e).count() as u8
}

pub const DEFAULT_LAYER_THRESHOLD: f64 = 0.5;

/// `[layer][0 = total, 1 = enhanced]` pixel counts of one sub-segment.
pub type LayerCounts = [[usize; 2]; N_LAYERS];

pub fn layer_counts(map: &SliceSectors, enhanced: &dyn Fn(usize, usize) -> bool, sub: u8) -> LayerCounts {
    let mut counts = [[0usize; 2]; N_LAYERS];
    for y in 0..map.labels.height {
        for x in 0..map.labels.width {
            let l = map.label(x, y);
            if l.region == Region::Myocardium && l.sub_segment == sub {
                let c = &mut counts[l.layer as usize - 1];
                c[0] += 1;
                c[1] += enhanced(x, y) as usize;
            }
        }
    }
    counts
}

/// Score of one sub-segment; a layer is enhanced when at least `threshold`
/// of its pixels are. Empty layers count as healthy.
pub fn score_counts(counts: &LayerCounts, threshold: f64) -> u8 {
    let flags: Vec<bool> = counts.iter().map(|&[n, e]| n > 0 && e as f64 >= threshold * n as f64).collect();
    score_layers(&flags)
}

pub fn score_sub_segment(map: &SliceSectors, enhanced: &dyn Fn(usize, usize) -> bool, sub: u8, threshold: f64) -> u8 {
    score_counts(&layer_counts(map, enhanced, sub), threshold)
}

/// Score band of a transmural fraction: 0, 1–25%, 26–50%, 51–75%, 76–100%.
pub fn score_for_fraction(f: f64) -> u8 {
    if f <= 0.0 {
        0
    } else {
        ((4.0 * f - 1e-9).ceil() as i64).clamp(1, 4) as u8
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
    pub sub_segments: [u8; N_SUB_SEGMENTS],
}

impl SliceScores {
    pub fn transmural(&self) -> [bool; N_SUB_SEGMENTS] {
        self.sub_segments.map(|s| s >= 3)
    }
}

/// Sub-segment scores of every slice.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub slices: Vec<SliceScores>,
}

impl ScoreGrid {
    pub fn validate(&self) -> Result<(), MieError> {
        for (i, s) in self.slices.iter().enumerate() {
            if let Some(bad) = s.sub_segments.iter().find(|&&v| v > 4) {
                return Err(MieError::Input(format!("slice entry {i}: score {bad} outside 0..=4")));
            }
        }
        Ok(())
    }

    /// Slice id of entry `i` (its position when no id is stored).
    pub fn slice_id(&self, i: usize) -> usize {
        self.slices[i].slice.unwrap_or(i)
    }

    pub fn get(&self, slice: usize) -> Option<&SliceScores> {
        (0..self.slices.len()).find(|&i| self.slice_id(i) == slice).map(|i| &self.slices[i])
    }
}

fn combine_cell(values: &mut [u8]) -> u8 {
    values.sort_unstable();
    let mut best = (values[0], 0usize);
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j < values.len() && values[j] == values[i] {
            j += 1;
        }
        if j - i > best.1 {
            best = (values[i], j - i);
        }
        i = j;
    }
    if best.1 > 1 || values.len() == 1 {
        best.0
    } else {
        values[(values.len() - 1) / 2]
    }
}

/// Majority vote per sub-segment; all-distinct cells take the (lower)
/// median.
pub fn combine_exams(grids: &[ScoreGrid]) -> Result<ScoreGrid, MieError> {
    let first = grids.first().ok_or_else(|| MieError::Shape("no exams to combine".into()))?;
    for (k, g) in grids.iter().enumerate() {
        if g.slices.len() != first.slices.len() {
            return Err(MieError::Shape(format!("exam {k} has {} slices, exam 0 has {}", g.slices.len(), first.slices.len())));
        }
        for i in 0..g.slices.len() {
            if g.slice_id(i) != first.slice_id(i) {
                return Err(MieError::Shape(format!("exam {k} entry {i} is slice {}, exam 0 has slice {}", g.slice_id(i), first.slice_id(i))));
            }
        }
    }
    let slices = (0..first.slices.len())
        .map(|i| {
            let mut out = [0u8; N_SUB_SEGMENTS];
            for (s, o) in out.iter_mut().enumerate() {
                let mut vals: Vec<u8> = grids.iter().map(|g| g.slices[i].sub_segments[s]).collect();
                *o = combine_cell(&mut vals);
            }
            SliceScores { slice: first.slices[i].slice, sub_segments: out }
        })
        .collect();
    Ok(ScoreGrid { slices })
}

/// Scores one registered DE volume over the sectorized slices.
pub fn score_exam(de: &Volume, sectors: &SectorMap, opts: &FcmOptions, threshold: f64) -> Result<(ScoreGrid, Enhancement), MieError> {
    let [nx, ny, nz] = de.dims();
    if [nx, ny, nz] != sectors.geometry.dims {
        return Err(MieError::Shape(format!("DE dims {:?} differ from sector map {:?}", de.dims(), sectors.geometry.dims)));
    }
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for s in &sectors.slices {
        for y in 0..ny {
            for x in 0..nx {
                if s.label(x, y).region == Region::Myocardium {
                    coords.push((s.slice, x, y));
                    values.push(de.get(x, y, s.slice) as f64);
                }
            }
        }
    }
    let enh = classify_enhanced(&values, opts)?;
    let mut flags = vec![false; de.geometry().len()];
    for (&(k, x, y), &e) in coords.iter().zip(&enh.enhanced) {
        flags[de.geometry().index(x, y, k)] = e;
    }
    let slices = sectors
        .slices
        .iter()
        .map(|s| {
            let g = de.geometry();
            let is_enh = |x: usize, y: usize| flags[g.index(x, y, s.slice)];
            let mut out = [0u8; N_SUB_SEGMENTS];
            for (i, o) in out.iter_mut().enumerate() {
                *o = score_sub_segment(s, &is_enh, i as u8 + 1, threshold);
            }
            SliceScores { slice: Some(s.slice), sub_segments: out }
        })
        .collect();
    Ok((ScoreGrid { slices }, enh))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentExtent {
    pub segment: usize,
    pub mean_score: f64,
    /// `"DE"` when any enhancement is scored, else `"NDE"`.
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceExtent {
    pub slice: usize,
    pub sub_segments: [u8; N_SUB_SEGMENTS],
    pub segments: Vec<SegmentExtent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MieReport {
    pub slices: Vec<SliceExtent>,
    pub de_segments: usize,
    pub nde_segments: usize,
    pub transmural_sub_segments: usize,
}

pub fn mie_report(grid: &ScoreGrid) -> MieReport {
    let mut de_segments = 0;
    let mut transmural = 0;
    let slices: Vec<SliceExtent> = grid
        .slices
        .iter()
        .enumerate()
        .map(|(i, s)| {
            transmural += s.transmural().iter().filter(|&&t| t).count();
            let segments = (0..N_SEGMENTS)
                .map(|seg| {
                    let mean_score = s.sub_segments[3 * seg..3 * seg + 3].iter().map(|&v| v as f64).sum::<f64>() / 3.0;
                    let de = mean_score > 0.0;
                    de_segments += de as usize;
                    SegmentExtent { segment: seg + 1, mean_score, class: if de { "DE" } else { "NDE" }.into() }
                })
                .collect();
            SliceExtent { slice: grid.slice_id(i), sub_segments: s.sub_segments, segments }
        })
        .collect();
    let total = slices.len() * N_SEGMENTS;
    MieReport { slices, de_segments, nde_segments: total - de_segments, transmural_sub_segments: transmural }
}
