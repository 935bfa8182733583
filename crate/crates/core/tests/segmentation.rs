mod common;

use cmrfusion_core::geometry::{is_simple, Point};
use cmrfusion_core::phantom::{render_cine_phase, seeds, PhantomSpec};
use cmrfusion_core::segmentation::{segment_slice, segment_slices, SnakeParams};
use common::{contour_distance, mean_radial_error, slice_grid};

fn noiseless() -> PhantomSpec {
    PhantomSpec { cine_noise: 0.0, de_noise: 0.0, ..PhantomSpec::default() }
}

#[test]
fn end_diastolic_annuli_are_recovered() {
    let spec = noiseless();
    let ed = render_cine_phase(&spec, 0).unwrap();
    let slices: Vec<_> = (0..spec.dims[2]).map(|k| slice_grid(&ed, k)).collect();
    let set = segment_slices(&slices, &seeds(&spec), &SnakeParams::default(), spec.spacing_mm[0]).unwrap();
    assert_eq!(set.slices.len(), spec.dims[2]);
    for s in &set.slices {
        let k = s.slice;
        let endo = mean_radial_error(&s.endo, spec.center_px, spec.endo_ed_mm(k) / spec.spacing_mm[0]);
        let epi = mean_radial_error(&s.epi, spec.center_px, spec.epi_mm(k) / spec.spacing_mm[0]);
        assert!(endo < 1.0 && epi < 1.0, "slice {k}: endo {endo:.3} px, epi {epi:.3} px");
        assert!(is_simple(&s.endo) && is_simple(&s.epi), "slice {k}");
    }
}

#[test]
fn contours_are_stable_under_seed_jitter() {
    let spec = noiseless();
    let ed = render_cine_phase(&spec, 0).unwrap();
    let params = SnakeParams::default();
    let all = seeds(&spec);
    for k in [0, 5, 11] {
        let img = slice_grid(&ed, k);
        let base_seeds = all.get(k).unwrap().clone();
        let base = segment_slice(&img, &base_seeds, &params, 1.0).unwrap();
        for (dx, dy) in [(3.0, 0.0), (0.0, -3.0), (-2.1, 2.1), (1.5, 1.0)] {
            let mut s = base_seeds.clone();
            s.p0 = s.p0 + Point::new(dx, dy);
            let moved = segment_slice(&img, &s, &params, 1.0).unwrap();
            let d_endo = contour_distance(&base.endo, &moved.endo);
            let d_epi = contour_distance(&base.epi, &moved.epi);
            assert!(d_endo < 0.5 && d_epi < 0.5, "slice {k}, P0 + ({dx}, {dy}): endo {d_endo:.3}, epi {d_epi:.3}");
        }
    }
}

#[test]
fn explicit_lambda_is_honored() {
    let spec = noiseless();
    let ed = render_cine_phase(&spec, 0).unwrap();
    let img = slice_grid(&ed, 4);
    let mut s = seeds(&spec).get(4).unwrap().clone();
    let auto = segment_slice(&img, &s, &SnakeParams::default(), 1.0).unwrap();
    s.lambda = Some(auto.lambda);
    let fixed = segment_slice(&img, &s, &SnakeParams::default(), 1.0).unwrap();
    assert_eq!(fixed, auto);
}
