use std::fs;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use cmrfusion_cli::server::{router, AppState, SegmentResponse, VolumeInfo};
use cmrfusion_core::geometry::Point;
use cmrfusion_core::phantom::PhantomSpec;
use cmrfusion_core::pipeline::{artifacts, read_json, Pipeline, PipelineConfig, Stage};
use cmrfusion_core::segmentation::{ContourSet, SeedConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn spec() -> PhantomSpec {
    PhantomSpec {
        dims: [96, 96, 3],
        center_px: Point::new(50.0, 46.0),
        body_center_px: Point::new(48.0, 48.0),
        body_semi_axes_mm: [44.0, 40.0],
        endo_radius_mm: [15.0, 12.0],
        n_phases: 8,
        ..PhantomSpec::default()
    }
}

/// Output directory after the phantom, sync and segment stages.
fn fixture() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig { output_dir: dir.path().into(), phantom: spec(), ..PipelineConfig::default() };
    let p = Pipeline::new(config.clone()).unwrap();
    for st in [Stage::Phantom, Stage::Sync, Stage::Segment] {
        p.run(st).unwrap();
    }
    (dir, router(AppState::new(Pipeline::new(config).unwrap())))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn png_dims(bytes: &[u8]) -> (u32, u32) {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).unwrap();
    (img.width(), img.height())
}

#[tokio::test]
async fn lists_volumes_with_phase_counts() {
    let (_dir, app) = fixture();
    let (status, body, _) = send(&app, "GET", "/api/volumes", None).await;
    assert_eq!(status, StatusCode::OK);
    let vols: Vec<VolumeInfo> = serde_json::from_slice(&body).unwrap();
    let ids: Vec<&str> = vols.iter().map(|v| v.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for want in ["cine", "cine_avg", "de_0", "de_aligned_0"] {
        assert!(ids.contains(&want), "{want} missing from {ids:?}");
    }
    let cine = vols.iter().find(|v| v.id == "cine").unwrap();
    assert_eq!((cine.dims, cine.phases), ([96, 96, 3], 8));
    assert_eq!(vols.iter().find(|v| v.id == "cine_avg").unwrap().phases, 1);
}

#[tokio::test]
async fn serves_slices_as_png() {
    let (_dir, app) = fixture();
    let (status, body, ctype) = send(&app, "GET", "/api/volumes/cine_avg/slices/1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    assert_eq!(png_dims(&body), (96, 96));

    let (status, windowed, _) = send(&app, "GET", "/api/volumes/cine/slices/2?phase=5&window=100&level=120", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(png_dims(&windowed), (96, 96));

    for (uri, want) in [
        ("/api/volumes/cine_avg/slices/3", StatusCode::NOT_FOUND),
        ("/api/volumes/nope/slices/0", StatusCode::NOT_FOUND),
        ("/api/volumes/cine/slices/0?phase=8", StatusCode::NOT_FOUND),
        ("/api/volumes/cine_avg/slices/0?window=0", StatusCode::UNPROCESSABLE_ENTITY),
    ] {
        let (status, body, _) = send(&app, "GET", uri, None).await;
        assert_eq!(status, want, "{uri}");
        assert!(json(&body)["error"].is_string(), "{uri}");
    }
}

#[tokio::test]
async fn seeds_round_trip_and_reject_invalid_points() {
    let (dir, app) = fixture();
    let path = dir.path().join(artifacts::SEEDS);
    let (status, body, _) = send(&app, "GET", "/api/seeds", None).await;
    assert_eq!(status, StatusCode::OK);
    let mut seeds: SeedConfig = serde_json::from_slice(&body).unwrap();
    assert_eq!(seeds, read_json::<SeedConfig>(&path).unwrap());

    let before = fs::read(&path).unwrap();
    let mut bad = seeds.clone();
    bad.slices[0].p1 = bad.slices[0].p0;
    let (status, _, _) = send(&app, "PUT", "/api/seeds", Some(serde_json::to_value(&bad).unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    bad.slices[0].p1 = Point::new(500.0, 10.0);
    let (status, _, _) = send(&app, "PUT", "/api/seeds", Some(serde_json::to_value(&bad).unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(fs::read(&path).unwrap(), before);

    seeds.slices[1].p0 = seeds.slices[1].p0 + Point::new(1.0, -1.0);
    let (status, _, _) = send(&app, "PUT", "/api/seeds", Some(serde_json::to_value(&seeds).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(read_json::<SeedConfig>(&path).unwrap(), seeds);
}

#[tokio::test]
async fn segment_preview_matches_the_batch_stage() {
    let (dir, app) = fixture();
    let contours_path = dir.path().join(artifacts::CONTOURS);
    let batch: ContourSet = read_json(&contours_path).unwrap();
    let before = fs::read(&contours_path).unwrap();

    let (status, body, _) = send(&app, "POST", "/api/segment/1", Some(serde_json::json!({ "preview": true }))).await;
    assert_eq!(status, StatusCode::OK);
    let r: SegmentResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(&r.contours, batch.get(1).unwrap());
    let png = base64::engine::general_purpose::STANDARD.decode(&r.filtered_png).unwrap();
    assert_eq!(png_dims(&png), (r.roi.width() as u32, r.roi.height() as u32));
    assert_eq!(fs::read(&contours_path).unwrap(), before);
}

#[tokio::test]
async fn segment_commit_persists_seeds_and_contours() {
    let (dir, app) = fixture();
    let batch: ContourSet = read_json(&dir.path().join(artifacts::CONTOURS)).unwrap();
    let lambda = batch.get(2).unwrap().lambda + 7;
    let (status, body, _) = send(&app, "POST", "/api/segment/2", Some(serde_json::json!({ "lambda": lambda, "convex_hull": true }))).await;
    assert_eq!(status, StatusCode::OK);
    let r: SegmentResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.contours.lambda, lambda);

    let stored: ContourSet = read_json(&dir.path().join(artifacts::CONTOURS)).unwrap();
    assert_eq!(stored.get(2).unwrap(), &r.contours);
    assert_eq!(stored.get(0), batch.get(0));
    let seeds: SeedConfig = read_json(&dir.path().join(artifacts::SEEDS)).unwrap();
    let s = seeds.get(2).unwrap();
    assert_eq!((s.lambda, s.convex_hull), (Some(lambda), true));

    // The next batch run uses the committed seeds.
    let p = Pipeline::new(PipelineConfig { output_dir: dir.path().into(), phantom: spec(), ..PipelineConfig::default() }).unwrap();
    p.run(Stage::Segment).unwrap();
    let rerun: ContourSet = read_json(&dir.path().join(artifacts::CONTOURS)).unwrap();
    assert_eq!(rerun.get(2).unwrap(), &r.contours);

    let (status, _, _) = send(&app, "POST", "/api/segment/9", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = send(&app, "POST", "/api/segment/1", Some(serde_json::json!({ "lamda": 3 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn contours_and_scores_endpoints() {
    let (dir, app) = fixture();
    let (status, body, _) = send(&app, "GET", "/api/contours", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body), read_json::<Value>(&dir.path().join(artifacts::CONTOURS)).unwrap());

    let (status, body, _) = send(&app, "GET", "/api/scores", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(json(&body)["error"].as_str().unwrap().contains("cmrfusion mie"));

    let scores = serde_json::json!({ "slices": [{ "slice": 0, "sub_segments": [0, 1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0] }] });
    fs::write(dir.path().join(artifacts::SCORES), serde_json::to_vec(&scores).unwrap()).unwrap();
    let (status, body, _) = send(&app, "GET", "/api/scores", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body), scores);
}

#[tokio::test]
async fn empty_output_directory_reports_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(Pipeline::new(PipelineConfig { output_dir: dir.path().into(), ..PipelineConfig::default() }).unwrap()));
    let (status, body, _) = send(&app, "GET", "/api/volumes", None).await;
    assert_eq!((status, json(&body)), (StatusCode::OK, serde_json::json!([])));
    for uri in ["/api/seeds", "/api/contours"] {
        let (status, _, _) = send(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
}
