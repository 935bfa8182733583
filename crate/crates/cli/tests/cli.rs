use std::fs;
use std::process::Command;

use clap::Parser;
use cmrfusion_cli::cli::{load_config, Args, Command as Cmd};
use cmrfusion_core::pipeline::Stage;

const BIN: &str = env!("CARGO_BIN_EXE_cmrfusion");

const SMALL: &str = r#"{
  "output_dir": "work",
  "phantom": {
    "dims": [96, 96, 2],
    "center_px": [50.0, 46.0],
    "body_center_px": [48.0, 48.0],
    "body_semi_axes_mm": [44.0, 40.0],
    "endo_radius_mm": [15.0, 12.0],
    "n_phases": 8
  }
}"#;

#[test]
fn parses_commands_and_overrides() {
    let a = Args::try_parse_from(["cmrfusion", "segment", "--out", "/tmp/x"]).unwrap();
    assert_eq!(a.command, Cmd::Segment);
    assert_eq!(a.command.stage(), Some(Stage::Segment));
    assert_eq!(load_config(&a).unwrap().output_dir, std::path::PathBuf::from("/tmp/x"));
    let s = Args::try_parse_from(["cmrfusion", "serve", "--port", "9000"]).unwrap();
    assert_eq!((s.command, s.port, s.command.stage()), (Cmd::Serve, 9000, None));
    assert_eq!(Args::try_parse_from(["cmrfusion", "all"]).unwrap().command.stage(), None);
    assert!(Args::try_parse_from(["cmrfusion", "registr"]).is_err());
}

#[test]
fn stages_run_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, SMALL).unwrap();

    let out = Command::new(BIN).args(["phantom", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.lines().any(|l| l.ends_with("cine.mvol.json")), "{listed}");
    assert!(dir.path().join("work/seeds.json").exists());

    let out = Command::new(BIN).args(["sync", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("work/cine_avg.mvol.json").exists());
}

#[test]
fn missing_inputs_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).args(["register", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run `cmrfusion sync` first"), "{err}");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"roi_factor": 9.0}"#).unwrap();
    let out = Command::new(BIN).args(["sync", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("roi_factor"));
}
