use cmrfusion_core::volume::*;
use proptest::prelude::*;

fn geometry(dims: [usize; 3], spacing: [f64; 3]) -> Geometry {
    Geometry::new(dims, spacing).unwrap().with_origin([-12.5, 3.0, 40.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn volume_round_trip(nx in 1usize..9, ny in 1usize..9, nz in 1usize..5, sx in 0.2f64..3.0, sz in 0.5f64..10.0, seed in any::<u32>()) {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry([nx, ny, nz], [sx, sx, sz]);
        let v = Volume::from_fn(g, |i, j, k| ((i * 31 + j * 17 + k * 7) as u32 ^ seed) as f32 * 0.37 - 1e3).unwrap();
        let path = dir.path().join("v.mvol.json");
        save_volume(&v, &path).unwrap();
        let back = load_volume(&path).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(load_any(&path).unwrap(), Stored::Volume(v));
    }

    #[test]
    fn cine_round_trip(n in 2usize..6, rr in 500.0f64..1500.0) {
        let dir = tempfile::tempdir().unwrap();
        let g = geometry([4, 3, 2], [1.0, 1.0, 8.0]);
        let phases: Vec<Volume> = (0..n).map(|t| Volume::from_fn(g.clone(), |i, j, k| (t * 100 + i + 10 * j + 50 * k) as f32).unwrap()).collect();
        let times: Vec<f64> = (0..n).map(|t| t as f64 * rr / n as f64).collect();
        let seq = CineSequence::new(phases, times, rr).unwrap();
        let path = dir.path().join("cine.mvol.json");
        save_cine(&seq, &path).unwrap();
        prop_assert_eq!(&load_cine(&path).unwrap(), &seq);
        match load_any(&path).unwrap() {
            Stored::Cine(c) => prop_assert_eq!(c.len(), n),
            Stored::Volume(_) => prop_assert!(false, "cine header read as a single volume"),
        }
    }
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::filled(geometry([4, 4, 2], [1.0, 1.0, 2.0]), 1.0).unwrap();
    let path = dir.path().join("v.mvol.json");
    save_volume(&v, &path).unwrap();
    let bin = dir.path().join("v.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_volume(&path), Err(VolumeError::Size { expected: 32, found: 31 })));
}

#[test]
fn header_is_plain_json() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::filled(geometry([2, 2, 1], [0.5, 0.5, 4.0]), 0.0).unwrap();
    let path = dir.path().join("h.mvol.json");
    save_volume(&v, &path).unwrap();
    let h: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(h["dtype"], "f32le");
    assert_eq!(h["payload"], "h.bin");
    assert_eq!(h["dims"], serde_json::json!([2, 2, 1]));
    assert_eq!(h["orientation"].as_array().unwrap().len(), 9);
}
