//! Connected-set area opening and closing (4-connectivity).
//!
//! Opening removes bright connected components smaller than `λ` pixels at
//! every gray level; closing does the same for dark ones. A dark component
//! that touches the image border is never filled by the closing.

use crate::geometry::{Grid2, Point};

#[inline]
fn neighbors(idx: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let x = idx % w;
    let y = idx / w;
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = idx - 1;
    }
    if x + 1 < w {
        out[1] = idx + 1;
    }
    if y > 0 {
        out[2] = idx - w;
    }
    if y + 1 < h {
        out[3] = idx + w;
    }
    out.into_iter().filter(|&n| n != usize::MAX)
}

fn find_root(parent: &mut [usize], mut x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    while parent[x] != root {
        let next = parent[x];
        parent[x] = root;
        x = next;
    }
    root
}

/// Union-find area opening. `border_saturated` gives every component that
/// touches the image border an unbounded area.
fn area_open_impl(values: &[f64], w: usize, h: usize, lambda: usize, border_saturated: bool) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Decreasing gray level, ties by index for determinism.
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut parent: Vec<usize> = (0..n).collect();
    let mut area = vec![0usize; n];
    let mut processed = vec![false; n];
    let on_border = |p: usize| {
        let (x, y) = (p % w, p / w);
        x == 0 || y == 0 || x + 1 == w || y + 1 == h
    };
    for &p in &order {
        parent[p] = p;
        area[p] = if border_saturated && on_border(p) { lambda.max(1) } else { 1 };
        for q in neighbors(p, w, h) {
            if !processed[q] {
                continue;
            }
            let r = find_root(&mut parent, q);
            if r == p {
                continue;
            }
            if values[r] == values[p] || area[r] < lambda {
                area[p] = area[p].saturating_add(area[r]);
                parent[r] = p;
            } else {
                area[p] = lambda;
            }
        }
        processed[p] = true;
    }

    let mut out = vec![0.0; n];
    for &p in order.iter().rev() {
        out[p] = if parent[p] == p { values[p] } else { out[parent[p]] };
    }
    out
}

/// Grayscale area opening with parameter `lambda` (pixels).
pub fn area_open(img: &Grid2<f64>, lambda: usize) -> Grid2<f64> {
    Grid2::from_vec(img.width, img.height, area_open_impl(&img.data, img.width, img.height, lambda, false))
}

/// Grayscale area closing with parameter `lambda` (pixels).
pub fn area_close(img: &Grid2<f64>, lambda: usize) -> Grid2<f64> {
    let neg: Vec<f64> = img.data.iter().map(|v| -v).collect();
    let opened = area_open_impl(&neg, img.width, img.height, lambda, true);
    Grid2::from_vec(img.width, img.height, opened.into_iter().map(|v| -v).collect())
}

/// Area opening followed by area closing.
pub fn area_open_close(img: &Grid2<f64>, lambda: usize) -> Grid2<f64> {
    area_close(&area_open(img, lambda), lambda)
}

/// Pixel count of the flat zone (4-connected, equal value) containing `p`.
pub fn flat_zone_area(img: &Grid2<f64>, p: (usize, usize)) -> usize {
    let (w, h) = (img.width, img.height);
    let start = p.1 * w + p.0;
    let v = img.data[start];
    let mut seen = vec![false; w * h];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(i) = stack.pop() {
        count += 1;
        for q in neighbors(i, w, h) {
            if !seen[q] && img.data[q] == v {
                seen[q] = true;
                stack.push(q);
            }
        }
    }
    count
}

/// Distance from `p` to the nearest pixel outside its flat zone, or to the
/// image border when the zone reaches it.
pub fn flat_zone_clearance(img: &Grid2<f64>, p: (usize, usize)) -> f64 {
    let v = img.get(p.0, p.1);
    let (px, py) = (p.0 as f64, p.1 as f64);
    let mut best = px.min(py).min((img.width - 1) as f64 - px).min((img.height - 1) as f64 - py) + 1.0;
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(x, y) != v {
                best = best.min((x as f64 - px).hypot(y as f64 - py));
            }
        }
    }
    best
}

/// `count` log-spaced areas from `lo_frac` to `hi_frac` of `roi_area`.
pub fn lambda_grid(roi_area: usize, lo_frac: f64, hi_frac: f64, count: usize) -> Vec<usize> {
    let lo = (roi_area as f64 * lo_frac).max(1.0);
    let hi = (roi_area as f64 * hi_frac).max(lo);
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            (lo * (hi / lo).powf(t)).round().max(1.0) as usize
        })
        .collect();
    out.dedup();
    out
}

/// Picks the `λ` whose zone area ratio is closest to 1; ties go to the
/// smaller `λ`.
pub fn pick_lambda(candidates: &[(usize, usize)]) -> Option<usize> {
    // |a/λ − 1| compared exactly as |a − λ|·λ' against |a' − λ'|·λ.
    let mut best: Option<(usize, usize)> = None;
    for &(lambda, area) in candidates {
        best = match best {
            None => Some((lambda, area)),
            Some((bl, ba)) => {
                let cur = (area.abs_diff(lambda) as u128) * bl as u128;
                let old = (ba.abs_diff(bl) as u128) * lambda as u128;
                if cur < old || (cur == old && lambda < bl) {
                    Some((lambda, area))
                } else {
                    Some((bl, ba))
                }
            }
        };
    }
    best.map(|b| b.0)
}

/// A `λ` is only admissible while P0 keeps its zone level: once `λ` passes
/// the cavity plateau area, the opening lowers the cavity toward the wall
/// intensity, and the zone that then matches `λ` is a merged one. The
/// level may drop by at most this fraction of the ROI range, measured from
/// the smallest `λ` tried.
pub const LAMBDA_LEVEL_TOL: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct LambdaSelection {
    pub lambda: usize,
    pub filtered: Grid2<f64>,
    pub zone_area: usize,
    /// `(λ, zone area)` for every candidate tried.
    pub tried: Vec<(usize, usize)>,
}

/// Filters `roi` at every `λ` of `grid` and keeps the one whose flat zone
/// around `p0` has an area closest to `λ`.
pub fn select_lambda(roi: &Grid2<f64>, p0: Point, grid: &[usize]) -> Option<LambdaSelection> {
    let px = (p0.x.round().clamp(0.0, (roi.width - 1) as f64) as usize, p0.y.round().clamp(0.0, (roi.height - 1) as f64) as usize);
    let (lo, hi) = roi.min_max();
    let mut all = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let f = area_open_close(roi, lambda);
        let a = flat_zone_area(&f, px);
        if a > 0 {
            all.push((lambda, a, f));
        }
    }
    let level0 = all.first().map(|c| c.2.get(px.0, px.1))?;
    let keeps_level = |f: &Grid2<f64>| level0 - f.get(px.0, px.1) <= LAMBDA_LEVEL_TOL * (hi - lo);
    let admissible: Vec<(usize, usize)> = all.iter().filter(|c| keeps_level(&c.2)).map(|c| (c.0, c.1)).collect();
    let tried: Vec<(usize, usize)> = all.iter().map(|c| (c.0, c.1)).collect();
    let lambda = pick_lambda(&admissible).or_else(|| pick_lambda(&tried))?;
    let idx = all.iter().position(|c| c.0 == lambda)?;
    let (_, zone_area, filtered) = all.swap_remove(idx);
    Some(LambdaSelection { lambda, filtered, zone_area, tried })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_one_is_identity() {
        let img = Grid2::from_fn(7, 5, |x, y| ((x * 13 + y * 7) % 5) as f64);
        assert_eq!(area_open_close(&img, 1), img);
    }

    #[test]
    fn small_component_removed() {
        let mut img = Grid2::filled(20, 20, 0.0);
        // area 3
        for x in 1..4 {
            img.set(x, 1, 1.0);
        }
        // area 50: 10 × 5 block
        for y in 10..15 {
            for x in 5..15 {
                img.set(x, y, 1.0);
            }
        }
        let out = area_open(&img, 10);
        assert_eq!(out.data.iter().filter(|&&v| v == 1.0).count(), 50);
        assert_eq!(out.get(2, 1), 0.0);
    }

    #[test]
    fn ridge_signal() {
        let img = Grid2::from_vec(7, 1, vec![0.0, 5.0, 0.0, 0.0, 7.0, 7.0, 0.0]);
        assert_eq!(area_open_close(&img, 2).data, vec![0.0, 0.0, 0.0, 0.0, 7.0, 7.0, 0.0]);
    }

    #[test]
    fn closing_fills_interior_dark_hole_only() {
        let mut img = Grid2::filled(9, 9, 10.0);
        img.set(4, 4, 0.0);
        img.set(0, 0, 0.0);
        let out = area_close(&img, 4);
        assert_eq!(out.get(4, 4), 10.0);
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn lambda_choice() {
        assert_eq!(pick_lambda(&[(100, 120), (200, 210), (400, 800)]), Some(200));
        assert_eq!(pick_lambda(&[(50, 500)]), Some(50));
        assert_eq!(pick_lambda(&[(100, 110), (200, 180)]), Some(100));
        let g = lambda_grid(10000, 0.05, 0.8, 16);
        assert_eq!(g.len(), 16);
        assert_eq!((g[0], g[15]), (500, 8000));
    }
}
