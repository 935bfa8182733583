#![allow(dead_code)]

use cmrfusion_core::geometry::{distance_to_polygon, Grid2, Point};
use cmrfusion_core::volume::Volume;

pub fn slice_grid(v: &Volume, k: usize) -> Grid2<f64> {
    let [nx, ny, _] = v.dims();
    Grid2::from_vec(nx, ny, v.slice(k).iter().map(|&x| x as f64).collect())
}

/// Mean of `| |p - c| - r |` over the contour points.
pub fn mean_radial_error(pts: &[Point], c: Point, r: f64) -> f64 {
    pts.iter().map(|p| (p.dist(c) - r).abs()).sum::<f64>() / pts.len() as f64
}

/// Symmetric mean point-to-polygon distance.
pub fn contour_distance(a: &[Point], b: &[Point]) -> f64 {
    let one = |x: &[Point], y: &[Point]| x.iter().map(|&p| distance_to_polygon(y, p)).sum::<f64>() / x.len() as f64;
    0.5 * (one(a, b) + one(b, a))
}
