mod common;

use std::fs;
use std::path::Path;

use cmrfusion_core::geometry::Point;
use cmrfusion_core::phantom::PhantomSpec;
use cmrfusion_core::pipeline::*;
use cmrfusion_core::segmentation::{ContourSet, SeedConfig};
use cmrfusion_core::volume::load_volume;

fn small() -> PhantomSpec {
    PhantomSpec {
        dims: [96, 96, 4],
        center_px: Point::new(50.0, 46.0),
        body_center_px: Point::new(48.0, 48.0),
        body_semi_axes_mm: [44.0, 40.0],
        endo_radius_mm: [15.0, 12.0],
        ..PhantomSpec::default()
    }
}

fn pipeline(dir: &Path) -> Pipeline {
    Pipeline::new(PipelineConfig { output_dir: dir.into(), phantom: small(), ..PipelineConfig::default() }).unwrap()
}

#[test]
fn full_run_is_accurate_and_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let p = pipeline(d);
        p.run(Stage::Phantom).unwrap();
        let written = p.run_all().unwrap();
        assert!(written.iter().all(|p| p.exists()));
    }
    let ra = fs::read(a.path().join(artifacts::REPORT_JSON)).unwrap();
    assert_eq!(ra, fs::read(b.path().join(artifacts::REPORT_JSON)).unwrap());
    assert_eq!(fs::read(a.path().join(artifacts::SCORES)).unwrap(), fs::read(b.path().join(artifacts::SCORES)).unwrap());

    let report: Report = serde_json::from_slice(&ra).unwrap();
    let agreement = report.agreement.as_ref().expect("phantom writes reference scores");
    assert_eq!(agreement.within_one.denominator, 4 * 18);
    assert!(agreement.within_one.numerator as f64 >= 0.95 * 72.0, "{agreement:?}");
    for (got, want) in report.registration.exams.iter().zip(&small().misalignments) {
        let g = &got.transform;
        assert!((g.tx_mm - want.tx_mm).abs() < 0.5 && (g.ty_mm - want.ty_mm).abs() < 0.5, "{g:?} vs {want:?}");
        assert!((g.theta_deg - want.theta_deg).abs() < 0.5 && g.dz_slices == want.dz_slices, "{g:?} vs {want:?}");
    }
    let tiers = report.atr_by_tier.as_ref().expect("phantom writes contraction labels");
    assert!(tiers.n > tiers.h && tiers.h > tiers.ad, "{tiers:?}");
    assert!(fs::read_to_string(a.path().join(artifacts::REPORT_TXT)).unwrap().contains("registration"));
}

#[test]
fn stages_report_their_missing_inputs() {
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(d.path());
    for st in Stage::ANALYSIS {
        match p.run(st) {
            Err(PipelineError::MissingArtifact { stage, producer, .. }) => {
                assert_eq!(stage, st);
                assert!(!producer.is_empty());
            }
            other => panic!("{st}: expected a missing-artifact error, got {other:?}"),
        }
    }
}

#[test]
fn preview_matches_batch_segmentation() {
    let d = tempfile::tempdir().unwrap();
    let p = pipeline(d.path());
    for st in [Stage::Phantom, Stage::Sync, Stage::Segment] {
        p.run(st).unwrap();
    }
    let set: ContourSet = read_json(&d.path().join(artifacts::CONTOURS)).unwrap();
    let seeds: SeedConfig = read_json(&d.path().join(artifacts::SEEDS)).unwrap();
    let avg = load_volume(&d.path().join(artifacts::CINE_AVG)).unwrap();
    for s in &seeds.slices {
        let preview = p.segment_preview(&avg, s).unwrap();
        assert_eq!(&preview.contours, set.get(s.slice).unwrap());
        let mut fixed = s.clone();
        fixed.lambda = Some(preview.contours.lambda);
        assert_eq!(p.segment_preview(&avg, &fixed).unwrap().contours, preview.contours);
    }
}

#[test]
fn config_files_are_strict_and_relative() {
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("run.json");
    fs::write(&path, r#"{"output_dir": "work", "seeds": "my_seeds.json", "roi_factor": 2.6}"#).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.output_dir, d.path().join("work"));
    assert_eq!(cfg.seeds.as_deref(), Some(d.path().join("my_seeds.json").as_path()));
    assert_eq!(cfg.roi_factor, 2.6);

    fs::write(&path, r#"{"roi_factr": 2.6}"#).unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(PipelineError::Json { .. })));
    fs::write(&path, r#"{"roi_factor": 3.5}"#).unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(PipelineError::Config(_))));
}

#[test]
fn stage_names_round_trip() {
    for st in Stage::ANALYSIS.iter().copied().chain([Stage::Phantom]) {
        assert_eq!(st.name().parse::<Stage>().unwrap(), st);
    }
    assert!("registr".parse::<Stage>().is_err());
}
