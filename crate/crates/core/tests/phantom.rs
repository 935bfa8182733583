use cmrfusion_core::geometry::Point;
use cmrfusion_core::mie::score_for_fraction;
use cmrfusion_core::phantom::*;
use cmrfusion_core::registration::RigidTransform;
use proptest::prelude::*;

fn small(nz: usize) -> PhantomSpec {
    PhantomSpec {
        dims: [96, 96, nz],
        center_px: Point::new(50.0, 46.0),
        body_center_px: Point::new(48.0, 48.0),
        body_semi_axes_mm: [44.0, 40.0],
        endo_radius_mm: [14.0, 12.0],
        n_phases: 8,
        cine_noise: 0.0,
        de_noise: 0.0,
        ..PhantomSpec::default()
    }
}

/// Non-overlapping scars on whole-degree boundaries.
fn scars() -> impl Strategy<Value = Vec<ScarSpec>> {
    prop::collection::vec((0u32..20, 1u32..60, 0.05f64..1.0), 1..5).prop_map(|raw| {
        let mut at = 0u32;
        let mut out = Vec::new();
        for (gap, span, fraction) in raw {
            let start = at + gap;
            let end = (start + span).min(360);
            if start >= 360 || end <= start {
                break;
            }
            out.push(ScarSpec { start_deg: start as f64, end_deg: end as f64, fraction });
            at = end;
        }
        out
    })
}

/// Angular share of each scar inside a sub-segment, by interval overlap.
fn overlap_fraction(scars: &[ScarSpec], sub: usize) -> f64 {
    let (lo, hi) = ((sub - 1) as f64 * 20.0, sub as f64 * 20.0);
    scars.iter().map(|s| (s.end_deg.min(hi) - s.start_deg.max(lo)).max(0.0) * s.fraction).sum::<f64>() / 20.0
}

proptest! {
    #[test]
    fn sub_segment_fraction_matches_interval_overlap(scars in scars()) {
        let spec = PhantomSpec { scars: scars.clone(), ..small(1) };
        let truth = truth_scores(&spec);
        for sub in 1..=18 {
            let want = overlap_fraction(&scars, sub);
            prop_assert!((sub_segment_fraction(&spec, sub) - want).abs() < 1e-9);
            prop_assert_eq!(truth.slices[0].sub_segments[sub - 1], score_for_fraction(want));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn rendered_wall_matches_analytic_tissue(scars in scars(), contrast in 2.0f64..5.0) {
        let spec = PhantomSpec { scars: scars.clone(), contrast_ratio: contrast, ..small(1) };
        let de = render_de_exam(&spec, &RigidTransform::default(), 0.0, 0).unwrap();
        let c = spec.center_px;
        let (endo, epi) = (spec.endo_ed_mm(0), spec.epi_mm(0));
        let reference = spec.reference_deg(0);
        let mut checked = 0;
        for j in 0..96 {
            for i in 0..96 {
                let p = Point::new(i as f64, j as f64);
                let r = p.dist(c);
                if r < endo + 1.0 || r > epi - 1.0 {
                    continue;
                }
                let a = ((p.y - c.y).atan2(p.x - c.x).to_degrees() - reference).rem_euclid(360.0);
                let depth = (r - endo) / (epi - endo);
                // Stay a pixel clear of every wedge edge.
                let near = scars.iter().any(|s| {
                    let da = |b: f64| { let d = (a - b).rem_euclid(360.0); d.min(360.0 - d) * r.to_radians() };
                    da(s.start_deg) < 1.0 || da(s.end_deg) < 1.0 || (s.covers(a) && ((depth - s.fraction) * (epi - endo)).abs() < 1.0)
                });
                if near {
                    continue;
                }
                let scar = scars.iter().any(|s| a >= s.start_deg && a < s.end_deg && depth < s.fraction);
                let want = if scar { DE_HEALTHY * contrast } else { DE_HEALTHY };
                prop_assert!((de.get(i, j, 0) as f64 - want).abs() < 1e-3, "({}, {}) {} vs {}", i, j, de.get(i, j, 0), want);
                checked += 1;
            }
        }
        prop_assert!(checked > 100, "{}", checked);
    }
}

#[test]
fn integer_shift_translates_the_exam() {
    let spec = small(3);
    let base = render_de_exam(&spec, &RigidTransform::default(), 0.0, 0).unwrap();
    let t = RigidTransform { tx_mm: 3.0, ty_mm: -2.0, theta_deg: 0.0, dz_slices: 1 };
    let moved = render_de_exam(&spec, &t, 0.0, 0).unwrap();
    for k in 1..3 {
        for j in 2..90 {
            for i in 0..90 {
                assert_eq!(moved.get(i + 3, j - 2, k), base.get(i, j, k - 1), "({i}, {j}, {k})");
            }
        }
    }
}

#[test]
fn rotation_about_the_center_preserves_the_axis_pixel() {
    let spec = PhantomSpec { center_px: Point::new(48.0, 48.0), ..small(1) };
    let base = render_de_exam(&spec, &RigidTransform::default(), 0.0, 0).unwrap();
    let t = RigidTransform { theta_deg: 90.0, ..RigidTransform::default() };
    let rot = render_de_exam(&spec, &t, 0.0, 0).unwrap();
    // A quarter turn maps the pixel grid onto itself.
    let hits = (0..96usize)
        .flat_map(|j| (0..96usize).map(move |i| (i, j)))
        .filter(|&(i, j)| {
            let (x, y) = (i as i64 - 48, j as i64 - 48);
            let (a, b) = ((48 - y) as usize, (48 + x) as usize);
            a < 96 && b < 96 && rot.get(i, j, 0) == base.get(a, b, 0)
        })
        .count();
    let alt = (0..96usize)
        .flat_map(|j| (0..96usize).map(move |i| (i, j)))
        .filter(|&(i, j)| {
            let (x, y) = (i as i64 - 48, j as i64 - 48);
            let (a, b) = ((48 + y) as usize, (48 - x) as usize);
            a < 96 && b < 96 && rot.get(i, j, 0) == base.get(a, b, 0)
        })
        .count();
    assert!(hits.max(alt) > 96 * 96 * 9 / 10, "{hits} {alt}");
}

#[test]
fn truth_survives_json() {
    let spec = PhantomSpec::default();
    let t = truth(&spec);
    let back: PhantomTruth = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, t);
    assert_eq!(t.scores.slices.len(), 12);
    assert_eq!(t.scores.slices[0].sub_segments, [4, 4, 4, 2, 2, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 3, 3, 3]);
    let labels = contraction_labels(&spec);
    assert_eq!(labels.get(0, 3), Some(cmrfusion_core::stats::Contraction::N));
    assert_eq!(labels.get(0, 7), None);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        PhantomSpec { spacing_mm: [1.0, 1.2, 8.0], ..small(1) },
        PhantomSpec { n_phases: 3, ..small(1) },
        PhantomSpec { misalignments: vec![], ..small(1) },
        PhantomSpec { scars: vec![ScarSpec { start_deg: 10.0, end_deg: 5.0, fraction: 0.5 }], ..small(1) },
    ];
    for s in bad {
        assert!(make_cine(&s).is_err());
    }
}
