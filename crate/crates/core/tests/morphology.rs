use cmrfusion_core::geometry::{Grid2, Point};
use cmrfusion_core::segmentation::morphology::*;
use proptest::prelude::*;

/// Components of `mask` (4-connected) as pixel lists.
fn components(mask: &[bool], w: usize, h: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for s in 0..mask.len() {
        if !mask[s] || seen[s] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (x, y) = (p % w, p / w);
            let mut nb = Vec::new();
            if x > 0 { nb.push(p - 1); }
            if x + 1 < w { nb.push(p + 1); }
            if y > 0 { nb.push(p - w); }
            if y + 1 < h { nb.push(p + w); }
            for q in nb {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Threshold decomposition: the opening at `p` is the highest level whose
/// upper set keeps a component through `p` of area >= λ (or touching the
/// border, when `border_kept`).
fn brute_open(img: &Grid2<f64>, lambda: usize, border_kept: bool) -> Grid2<f64> {
    let (w, h) = (img.width, img.height);
    let mut levels = img.data.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut out = vec![levels[0]; w * h];
    for &t in &levels {
        let mask: Vec<bool> = img.data.iter().map(|&v| v >= t).collect();
        for comp in components(&mask, w, h) {
            let border = comp.iter().any(|&p| p % w == 0 || p / w == 0 || p % w + 1 == w || p / w + 1 == h);
            if comp.len() >= lambda || (border_kept && border) {
                for p in comp {
                    out[p] = out[p].max(t);
                }
            }
        }
    }
    Grid2::from_vec(w, h, out)
}

fn brute_close(img: &Grid2<f64>, lambda: usize) -> Grid2<f64> {
    let neg = Grid2::from_vec(img.width, img.height, img.data.iter().map(|v| -v).collect());
    let o = brute_open(&neg, lambda, true);
    Grid2::from_vec(img.width, img.height, o.data.iter().map(|v| -v).collect())
}

fn small_image() -> impl Strategy<Value = Grid2<f64>> {
    (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
        prop::collection::vec(0u8..5, w * h).prop_map(move |v| Grid2::from_vec(w, h, v.into_iter().map(f64::from).collect()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn opening_matches_threshold_decomposition(img in small_image(), lambda in 1usize..20) {
        prop_assert_eq!(area_open(&img, lambda), brute_open(&img, lambda, false));
    }

    #[test]
    fn closing_matches_threshold_decomposition(img in small_image(), lambda in 1usize..20) {
        prop_assert_eq!(area_close(&img, lambda), brute_close(&img, lambda));
    }

    #[test]
    fn filters_are_ordered_and_idempotent(img in small_image(), lambda in 1usize..20) {
        let o = area_open(&img, lambda);
        let c = area_close(&img, lambda);
        for i in 0..img.data.len() {
            prop_assert!(o.data[i] <= img.data[i]);
            prop_assert!(c.data[i] >= img.data[i]);
        }
        prop_assert_eq!(&area_open(&o, lambda), &o);
        prop_assert_eq!(&area_close(&c, lambda), &c);
        let f = area_open_close(&img, lambda);
        prop_assert_eq!(&area_open_close(&f, lambda), &f);
    }
}

#[test]
fn notched_cavity_zone_tracks_cavity_area() {
    // Bright disk of radius 16 with three dark papillary notches, on a
    // darker wall and background.
    let (cx, cy, r) = (40.0, 40.0, 16.0);
    let notches = [Point::new(52.0, 40.0), Point::new(34.0, 50.0), Point::new(33.0, 30.0)];
    let img = Grid2::from_fn(80, 80, |x, y| {
        let p = Point::new(x as f64, y as f64);
        let d = p.dist(Point::new(cx, cy));
        if d <= r {
            if notches.iter().any(|n| p.dist(*n) <= 2.5) { 90.0 } else { 200.0 }
        } else if d <= r + 9.0 {
            80.0
        } else {
            30.0
        }
    });
    let cavity = img.data.iter().filter(|&&v| v >= 90.0).count() as f64;
    let grid = lambda_grid(img.len(), 0.05, 0.80, 16);
    let sel = select_lambda(&img, Point::new(cx, cy), &grid).unwrap();
    let rel = (sel.zone_area as f64 - cavity).abs() / cavity;
    assert!(rel < 0.15, "zone {} vs cavity {cavity} (lambda {})", sel.zone_area, sel.lambda);
    // The notches are filled in the chosen image.
    assert_eq!(sel.filtered.get(52, 40), sel.filtered.get(40, 40));
}
