//! Endocardial and epicardial contour extraction on short-axis slices.

pub mod gvf;
pub mod morphology;
pub mod snake;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{circle, contains, convex_hull, distance_to_polygon, is_simple, resample_uniform, Contour, ContourKind, Grid2, Point};
use gvf::{edge_map, gvf_field, DEFAULT_GVF_ITERS};
use morphology::{area_open_close, flat_zone_clearance, lambda_grid, select_lambda};
pub use snake::{evolve_snake, evolve_snake_with_decay, SnakeMask, SnakeOutcome, SnakeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("invalid seeds: {0}")]
    InvalidSeeds(String),
    #[error("no flat zone around P0 for any lambda")]
    Selection,
    #[error("contour collapsed (area {area:.2} px² at iteration {iteration})")]
    Collapse { area: f64, iteration: usize },
    #[error("segmentation config: {0}")]
    Config(String),
}

pub const DEFAULT_MASK_INNER_PX: f64 = 2.0;
pub const DEFAULT_MASK_OUTER_MM: f64 = 12.0;
pub const ROI_SIDE_FACTOR: f64 = 3.0;
pub const LAMBDA_GRID_LEN: usize = 16;
pub const LAMBDA_LO_FRAC: f64 = 0.05;
pub const LAMBDA_HI_FRAC: f64 = 0.80;
/// Smallest radius of the initial endocardial circle around P0, in pixels.
/// The circle grows to fill P0's flat zone: a small circle off the cavity
/// center sees one GVF direction on all its points and drifts instead of
/// expanding.
pub const ENDO_INIT_RADIUS_PX: f64 = 3.0;
/// Gap kept between the initial circle and the flat zone boundary.
pub const ENDO_INIT_MARGIN_PX: f64 = 2.0;
pub const EPI_PRESSURE_DECAY: f64 = 0.99;

fn default_inner() -> f64 {
    DEFAULT_MASK_INNER_PX
}

fn default_outer() -> f64 {
    DEFAULT_MASK_OUTER_MM
}

/// Operator input for one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSeeds {
    pub slice: usize,
    pub p0: Point,
    pub p1: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<usize>,
    #[serde(default = "default_inner")]
    pub mask_inner_px: f64,
    #[serde(default = "default_outer")]
    pub mask_outer_mm: f64,
    #[serde(default)]
    pub convex_hull: bool,
}

impl SliceSeeds {
    pub fn new(slice: usize, p0: Point, p1: Point) -> Self {
        SliceSeeds { slice, p0, p1, lambda: None, mask_inner_px: DEFAULT_MASK_INNER_PX, mask_outer_mm: DEFAULT_MASK_OUTER_MM, convex_hull: false }
    }

    pub fn validate(&self, width: usize, height: usize, pixel_mm: f64) -> Result<(), SegmentationError> {
        let inside = |p: Point| p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= (width - 1) as f64 && p.y <= (height - 1) as f64;
        let bad = |m: String| Err(SegmentationError::InvalidSeeds(format!("slice {}: {m}", self.slice)));
        if !inside(self.p0) || !inside(self.p1) {
            return bad(format!("P0 {:?} and P1 {:?} must lie inside the {width}x{height} image", self.p0, self.p1));
        }
        if self.p0.dist(self.p1) < 1.0 {
            return bad("P0 and P1 must be distinct".into());
        }
        if self.lambda == Some(0) {
            return bad("lambda must be >= 1".into());
        }
        if !(self.mask_inner_px > 0.0) || !self.mask_outer_mm.is_finite() {
            return bad("mask_inner_px must be > 0 and mask_outer_mm finite".into());
        }
        if self.mask_outer_mm <= self.mask_inner_px * pixel_mm {
            return bad(format!("mask_outer_mm {} must exceed mask_inner_px x pixel size ({})", self.mask_outer_mm, self.mask_inner_px * pixel_mm));
        }
        Ok(())
    }
}

/// Seeds for every segmented slice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub slices: Vec<SliceSeeds>,
}

impl SeedConfig {
    pub fn get(&self, slice: usize) -> Option<&SliceSeeds> {
        self.slices.iter().find(|s| s.slice == slice)
    }

    pub fn validate(&self, dims: [usize; 3], pixel_mm: f64) -> Result<(), SegmentationError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.slices {
            if s.slice >= dims[2] {
                return Err(SegmentationError::InvalidSeeds(format!("slice {} out of range (volume has {})", s.slice, dims[2])));
            }
            if !seen.insert(s.slice) {
                return Err(SegmentationError::InvalidSeeds(format!("slice {} listed twice", s.slice)));
            }
            s.validate(dims[0], dims[1], pixel_mm)?;
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn offset(&self) -> Point {
        Point::new(self.x0 as f64, self.y0 as f64)
    }
}

/// Square ROI of side `3·|P0P1|` centered on P0, clamped to the image.
pub fn segmentation_roi(p0: Point, p1: Point, width: usize, height: usize) -> Rect {
    let side = (ROI_SIDE_FACTOR * p0.dist(p1)).round().max(8.0);
    let span = |c: f64, n: usize| {
        let lo = (c - side / 2.0).round();
        let hi = lo + side;
        (lo.max(0.0) as usize, (hi.min(n as f64)) as usize)
    };
    let (x0, x1) = span(p0.x, width);
    let (y0, y1) = span(p0.y, height);
    Rect { x0, y0, x1, y1 }
}

/// Width in pixels of the epicardial search band.
pub fn annulus_width_px(mask_inner_px: f64, mask_outer_mm: f64, pixel_mm: f64) -> f64 {
    mask_outer_mm / pixel_mm - mask_inner_px
}

/// Endocardial result plus what the epicardial step reuses.
#[derive(Clone, Debug)]
pub struct EndoSegmentation {
    pub contour: Contour,
    pub lambda: usize,
    pub roi: Rect,
    /// Filtered ROI image.
    pub filtered: Grid2<f64>,
    pub repaired: bool,
}

fn to_image(pts: &[Point], roi: &Rect) -> Vec<Point> {
    let o = roi.offset();
    pts.iter().map(|&p| p + o).collect()
}

fn to_roi(pts: &[Point], roi: &Rect) -> Vec<Point> {
    let o = roi.offset();
    pts.iter().map(|&p| p - o).collect()
}

fn smooth_hull(pts: &[Point], n: usize) -> Vec<Point> {
    resample_uniform(&convex_hull(pts), n)
}

pub fn segment_endo(slice: &Grid2<f64>, seeds: &SliceSeeds, params: &SnakeParams, pixel_mm: f64) -> Result<EndoSegmentation, SegmentationError> {
    seeds.validate(slice.width, slice.height, pixel_mm)?;
    params.validate()?;
    let roi = segmentation_roi(seeds.p0, seeds.p1, slice.width, slice.height);
    let img = slice.crop(roi.x0, roi.y0, roi.width(), roi.height());
    let p0 = seeds.p0 - roi.offset();
    let (lambda, filtered) = match seeds.lambda {
        Some(l) => (l, area_open_close(&img, l)),
        None => {
            let grid = lambda_grid(roi.area(), LAMBDA_LO_FRAC, LAMBDA_HI_FRAC, LAMBDA_GRID_LEN);
            let sel = select_lambda(&img, p0, &grid).ok_or(SegmentationError::Selection)?;
            (sel.lambda, sel.filtered)
        }
    };
    let field = gvf_field(&edge_map(&filtered), params.mu_gvf, DEFAULT_GVF_ITERS).unit_directions();
    let px = (p0.x.round().clamp(0.0, (filtered.width - 1) as f64) as usize, p0.y.round().clamp(0.0, (filtered.height - 1) as f64) as usize);
    let radius = (flat_zone_clearance(&filtered, px) - ENDO_INIT_MARGIN_PX).max(ENDO_INIT_RADIUS_PX);
    let init = circle(p0, radius, params.n_points);
    let out = evolve_snake(&init, &field, params, None)?;
    let pts = if seeds.convex_hull { smooth_hull(&out.points, params.n_points) } else { out.points };
    Ok(EndoSegmentation { contour: Contour::new(ContourKind::Endo, to_image(&pts, &roi)), lambda, roi, filtered, repaired: out.repaired })
}

/// Offsets a positively oriented polygon outward by `d` along vertex
/// normals.
fn offset_polygon(pts: &[Point], d: f64, n: usize) -> Vec<Point> {
    let normals = snake::outward_normals(pts);
    let moved: Vec<Point> = pts.iter().zip(&normals).map(|(&p, &nrm)| p + nrm * d).collect();
    if is_simple(&moved) {
        resample_uniform(&moved, n)
    } else {
        smooth_hull(&moved, n)
    }
}

/// Copy of `img` with the endocardium and the inner mask band painted at
/// the median level just outside them, so the blood-wall edge no longer
/// pulls the epicardial snake inward.
pub fn mask_cavity(img: &Grid2<f64>, inner: &[Point], band: f64) -> Grid2<f64> {
    let dist = Grid2::from_fn(img.width, img.height, |x, y| {
        let p = Point::new(x as f64, y as f64);
        if contains(inner, p) {
            -1.0
        } else {
            distance_to_polygon(inner, p)
        }
    });
    let mut ring: Vec<f64> =
        img.data.iter().zip(&dist.data).filter(|(_, &d)| d >= band && d < band + 2.0).map(|(&v, _)| v).collect();
    if ring.is_empty() {
        return img.clone();
    }
    ring.sort_by(f64::total_cmp);
    let fill = ring[ring.len() / 2];
    let mut out = img.clone();
    for (v, &d) in out.data.iter_mut().zip(&dist.data) {
        if d < band {
            *v = fill;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct EpiSegmentation {
    pub contour: Contour,
    pub repaired: bool,
}

pub fn segment_epi(endo: &EndoSegmentation, seeds: &SliceSeeds, params: &SnakeParams, pixel_mm: f64) -> Result<EpiSegmentation, SegmentationError> {
    params.validate()?;
    if !endo.contour.is_valid() {
        return Err(SegmentationError::Config("endocardial contour is not a valid simple polygon".into()));
    }
    let min_dist = seeds.mask_inner_px;
    let max_dist = seeds.mask_outer_mm / pixel_mm;
    if !(max_dist > min_dist) {
        return Err(SegmentationError::Config(format!("empty epicardial mask: inner {min_dist} px >= outer {max_dist} px")));
    }
    let roi = &endo.roi;
    let inner = to_roi(&endo.contour.points, roi);
    let masked = mask_cavity(&endo.filtered, &inner, min_dist);
    let field = gvf_field(&edge_map(&masked), params.mu_gvf, DEFAULT_GVF_ITERS).unit_directions();
    let mask = SnakeMask::Annulus {
        inner: inner.clone(),
        min_dist,
        max_dist,
        bounds: Box::new(SnakeMask::bounds(roi.width(), roi.height())),
    };
    let init = offset_polygon(&inner, 0.5 * (min_dist + max_dist), params.n_points);
    let out = evolve_snake_with_decay(&init, &field, params, Some(&mask), EPI_PRESSURE_DECAY)?;
    let mut pts = if seeds.convex_hull { smooth_hull(&out.points, params.n_points) } else { out.points };
    if !inner.iter().all(|&p| contains(&pts, p)) {
        // A hull always encloses the clamped points, and those stay outside
        // the endocardium.
        pts = smooth_hull(&[pts.as_slice(), offset_polygon(&inner, min_dist, params.n_points).as_slice()].concat(), params.n_points);
    }
    Ok(EpiSegmentation { contour: Contour::new(ContourKind::Epi, to_image(&pts, roi)), repaired: out.repaired })
}

/// Contours of one slice as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceContours {
    pub slice: usize,
    pub lambda: usize,
    pub endo: Vec<Point>,
    pub epi: Vec<Point>,
    #[serde(default)]
    pub repaired: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub slices: Vec<SliceContours>,
}

impl ContourSet {
    pub fn get(&self, slice: usize) -> Option<&SliceContours> {
        self.slices.iter().find(|s| s.slice == slice)
    }
}

pub fn segment_slice(slice: &Grid2<f64>, seeds: &SliceSeeds, params: &SnakeParams, pixel_mm: f64) -> Result<SliceContours, SegmentationError> {
    let endo = segment_endo(slice, seeds, params, pixel_mm)?;
    let epi = segment_epi(&endo, seeds, params, pixel_mm)?;
    Ok(SliceContours {
        slice: seeds.slice,
        lambda: endo.lambda,
        repaired: endo.repaired || epi.repaired,
        endo: endo.contour.points,
        epi: epi.contour.points,
    })
}

/// Segments every seeded slice in parallel; results are ordered by slice.
pub fn segment_slices(
    slices: &[Grid2<f64>],
    seeds: &SeedConfig,
    params: &SnakeParams,
    pixel_mm: f64,
) -> Result<ContourSet, SegmentationError> {
    let mut jobs: Vec<&SliceSeeds> = seeds.slices.iter().collect();
    jobs.sort_by_key(|s| s.slice);
    let out: Result<Vec<SliceContours>, SegmentationError> = jobs
        .par_iter()
        .map(|s| {
            let img = slices.get(s.slice).ok_or_else(|| SegmentationError::InvalidSeeds(format!("slice {} out of range", s.slice)))?;
            segment_slice(img, s, params, pixel_mm)
        })
        .collect();
    Ok(ContourSet { slices: out? })
}
