//! Semi-implicit parametric snake driven by a vector field and a balloon
//! pressure.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gvf::VectorField;
use super::SegmentationError;
use crate::geometry::{closest_on_polygon, contains, convex_hull, is_simple, resample_uniform, signed_area, Point, MIN_CONTOUR_POINTS};

/// Internal, pressure and external force weights plus discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnakeParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa_p: f64,
    pub kappa: f64,
    pub mu_gvf: f64,
    pub n_points: usize,
    pub max_iters: usize,
    pub convergence_px: f64,
}

impl Default for SnakeParams {
    fn default() -> Self {
        SnakeParams {
            alpha: 1.0,
            beta: 40.0,
            kappa_p: 0.6,
            kappa: 1.7,
            mu_gvf: 0.3,
            n_points: 100,
            max_iters: 400,
            convergence_px: 0.1,
        }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let finite = [self.alpha, self.beta, self.kappa_p, self.kappa, self.mu_gvf, self.convergence_px].iter().all(|v| v.is_finite());
        if !finite || self.alpha < 0.0 || self.beta < 0.0 || self.kappa < 0.0 || self.mu_gvf < 0.0 {
            return Err(SegmentationError::Config("alpha, beta, kappa and mu_gvf must be finite and >= 0".into()));
        }
        if self.n_points < MIN_CONTOUR_POINTS {
            return Err(SegmentationError::Config(format!("n_points must be >= {MIN_CONTOUR_POINTS}")));
        }
        Ok(())
    }
}

/// Pseudo time step of one snake iteration.
pub const SNAKE_TIME_STEP: f64 = 0.5;
/// Contours with a smaller area (px²) are treated as collapsed.
pub const COLLAPSE_AREA_PX2: f64 = 4.0;

/// Region the snake points are clamped to after every step.
#[derive(Clone, Debug)]
pub enum SnakeMask {
    /// Axis-aligned box `[x0, x1] × [y0, y1]`.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Points whose distance outside `inner` lies in `[min_dist, max_dist]`,
    /// further limited to `bounds`.
    Annulus { inner: Vec<Point>, min_dist: f64, max_dist: f64, bounds: Box<SnakeMask> },
}

impl SnakeMask {
    pub fn bounds(width: usize, height: usize) -> SnakeMask {
        SnakeMask::Rect { x0: 0.0, y0: 0.0, x1: (width - 1) as f64, y1: (height - 1) as f64 }
    }

    /// Signed distance from `inner` (negative inside).
    fn signed_distance(inner: &[Point], p: Point) -> (Point, f64) {
        let (q, d) = closest_on_polygon(inner, p);
        if contains(inner, p) {
            (q, -d)
        } else {
            (q, d)
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match self {
            SnakeMask::Rect { x0, y0, x1, y1 } => p.x >= *x0 && p.x <= *x1 && p.y >= *y0 && p.y <= *y1,
            SnakeMask::Annulus { inner, min_dist, max_dist, bounds } => {
                let (_, s) = Self::signed_distance(inner, p);
                s >= *min_dist - 1e-9 && s <= *max_dist + 1e-9 && bounds.contains(p)
            }
        }
    }

    /// Nearest admissible position for `p`. `normal` is used as the
    /// push direction when `p` lies exactly on the inner polygon.
    pub fn clamp(&self, p: Point, normal: Point) -> Point {
        match self {
            SnakeMask::Rect { x0, y0, x1, y1 } => Point::new(p.x.clamp(*x0, *x1), p.y.clamp(*y0, *y1)),
            SnakeMask::Annulus { inner, min_dist, max_dist, bounds } => {
                let (q, s) = Self::signed_distance(inner, p);
                let target = s.clamp(*min_dist, *max_dist);
                let out = if target == s {
                    p
                } else {
                    let d = p - q;
                    let len = d.norm();
                    let dir = if len > 1e-12 {
                        if s < 0.0 {
                            d * (-1.0 / len)
                        } else {
                            d * (1.0 / len)
                        }
                    } else {
                        normal
                    };
                    q + dir * target
                };
                bounds.clamp(out, normal)
            }
        }
    }
}

/// Final contour of an evolution and how it ended.
#[derive(Clone, Debug, PartialEq)]
pub struct SnakeOutcome {
    pub points: Vec<Point>,
    pub iterations: usize,
    pub converged: bool,
    /// A self-intersection was repaired with the convex hull.
    pub repaired: bool,
}

/// `(I + τA)⁻¹` for the circulant pentadiagonal internal-energy matrix.
fn internal_inverse(n: usize, alpha: f64, beta: f64, tau: f64) -> Result<DMatrix<f64>, SegmentationError> {
    let a = beta;
    let b = -alpha - 4.0 * beta;
    let c = 2.0 * alpha + 6.0 * beta;
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let at = |k: isize| ((i as isize + k).rem_euclid(n as isize)) as usize;
        m[(i, at(-2))] += tau * a;
        m[(i, at(-1))] += tau * b;
        m[(i, i)] += tau * c;
        m[(i, at(1))] += tau * b;
        m[(i, at(2))] += tau * a;
    }
    m.try_inverse().ok_or_else(|| SegmentationError::Config("singular snake matrix".into()))
}

/// Unit outward normals of a positively oriented closed polygon.
pub fn outward_normals(pts: &[Point]) -> Vec<Point> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let t = pts[(i + 1) % n] - pts[(i + n - 1) % n];
            let len = t.norm();
            if len > 1e-12 {
                Point::new(t.y / len, -t.x / len)
            } else {
                Point::new(0.0, 0.0)
            }
        })
        .collect()
}

fn orient_positive(mut pts: Vec<Point>) -> Vec<Point> {
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    pts
}

/// Evolves `init` under the snake equations with constant pressure.
pub fn evolve_snake(init: &[Point], field: &VectorField, params: &SnakeParams, mask: Option<&SnakeMask>) -> Result<SnakeOutcome, SegmentationError> {
    evolve_snake_with_decay(init, field, params, mask, 1.0)
}

/// Like [`evolve_snake`], multiplying the pressure weight by
/// `pressure_decay` after every iteration.
pub fn evolve_snake_with_decay(
    init: &[Point],
    field: &VectorField,
    params: &SnakeParams,
    mask: Option<&SnakeMask>,
    pressure_decay: f64,
) -> Result<SnakeOutcome, SegmentationError> {
    params.validate()?;
    if init.len() < 3 {
        return Err(SegmentationError::Config("initial contour needs at least 3 points".into()));
    }
    let n = params.n_points;
    let bounds = SnakeMask::bounds(field.width(), field.height());
    let clamp_all = |pts: &mut [Point]| {
        let normals = outward_normals(pts);
        for (p, nrm) in pts.iter_mut().zip(normals) {
            *p = bounds.clamp(*p, nrm);
            if let Some(m) = mask {
                *p = m.clamp(*p, nrm);
            }
        }
    };

    let mut pts = orient_positive(resample_uniform(init, n));
    clamp_all(&mut pts);
    let inv = internal_inverse(n, params.alpha, params.beta, SNAKE_TIME_STEP)?;
    let tau = SNAKE_TIME_STEP;
    let mut kappa_p = params.kappa_p;
    let mut repaired = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let normals = outward_normals(&pts);
        let mut rx = nalgebra::DVector::<f64>::zeros(n);
        let mut ry = nalgebra::DVector::<f64>::zeros(n);
        for i in 0..n {
            let f = field.sample(pts[i]);
            rx[i] = pts[i].x + tau * (params.kappa * f.x + kappa_p * normals[i].x);
            ry[i] = pts[i].y + tau * (params.kappa * f.y + kappa_p * normals[i].y);
        }
        let nx = &inv * rx;
        let ny = &inv * ry;
        let mut next: Vec<Point> = (0..n).map(|i| Point::new(nx[i], ny[i])).collect();
        clamp_all(&mut next);
        let mut next = resample_uniform(&next, n);
        next = orient_positive(next);
        if !is_simple(&next) {
            let hull = convex_hull(&next);
            if hull.len() < 3 {
                return Err(SegmentationError::Collapse { area: 0.0, iteration: iterations });
            }
            next = orient_positive(resample_uniform(&hull, n));
            repaired = true;
        }
        let area = signed_area(&next);
        if area < COLLAPSE_AREA_PX2 {
            return Err(SegmentationError::Collapse { area, iteration: iterations });
        }
        let moved = next.iter().map(|&p| closest_on_polygon(&pts, p).1).fold(0.0, f64::max);
        pts = next;
        kappa_p *= pressure_decay;
        if moved < params.convergence_px {
            converged = true;
            break;
        }
    }
    Ok(SnakeOutcome { points: pts, iterations, converged, repaired })
}
