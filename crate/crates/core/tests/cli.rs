use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use roadghg::speed::write_raster;
use roadghg::synth::{gen_raster, RasterSpec};

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn fixture() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_direction");
    copy_dir(&src, tmp.path());
    let cfg = tmp.path().join("run.toml");
    (tmp, cfg)
}

fn roadghg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadghg"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(cfg: &str) {
    let o = roadghg(&["train", "--config", cfg, "--max-epochs", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn historical_run_has_no_speed_stage() {
    let (tmp, cfg) = fixture();
    let cfg = cfg.to_str().unwrap();
    train(cfg);
    let o = roadghg(&["predict", "--config", cfg, "--speed-source", "historical"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/trace.json")).unwrap()).unwrap();
    let stages: Vec<&str> = trace
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["stage"].as_str().unwrap())
        .collect();
    assert!(!stages.contains(&"speed"), "{stages:?}");
    assert!(stages.contains(&"counts") && stages.contains(&"emissions"), "{stages:?}");

    let out = tmp.path().join("est");
    let o = roadghg(&[
        "predict",
        "--config",
        cfg,
        "--speed-source",
        "estimated",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read_to_string(out.join("trace.json")).unwrap().contains("\"speed\""));

    let o = roadghg(&["evaluate", "--config", cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for table in ["table_counts.csv", "table_aadt.csv", "table_emissions.csv", "scatter.csv"] {
        assert!(tmp.path().join("out").join(table).exists(), "{table}");
    }
}

#[test]
fn missing_ground_truth_is_a_validation_error() {
    let (tmp, _) = fixture();
    let o = roadghg(&[
        "train",
        "--history-dir",
        tmp.path().join("history").to_str().unwrap(),
        "--weights-dir",
        tmp.path().join("w").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("--ground-truth"), "{err}");
}

#[test]
fn training_on_test_years_trips_the_leakage_guard() {
    let (tmp, cfg) = fixture();
    let o = roadghg(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--history-dir",
        tmp.path().join("test_history").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn unusable_raster_exits_with_speed_failure() {
    let (tmp, cfg) = fixture();
    let still = gen_raster(&RasterSpec {
        shift_px: 0,
        ..RasterSpec::default()
    })
    .unwrap();
    write_raster(&tmp.path().join("rasters/STILL_A.dbr"), &still, Some("STILL")).unwrap();
    let o = roadghg(&["speed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(tmp.path().join("out/speed_estimates.csv").exists());
}

#[test]
fn fixture_rasters_all_yield_a_speed() {
    let (_tmp, cfg) = fixture();
    let o = roadghg(&["speed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn bad_flag_values_are_rejected() {
    let (_tmp, cfg) = fixture();
    let o = roadghg(&["predict", "--config", cfg.to_str().unwrap(), "--road-type", "cycleways"]);
    assert_ne!(code(&o), 0);
    let o = roadghg(&["train", "--config", cfg.to_str().unwrap(), "--patience", "three"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn synth_writes_a_runnable_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("fx");
    let o = roadghg(&["synth", "--output-dir", root.to_str().unwrap(), "--synth-days", "14", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = root.join("run.toml");
    train(cfg.to_str().unwrap());
    let o = roadghg(&["predict", "--config", cfg.to_str().unwrap(), "--no-vehicle-type"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(root.join("out/emissions_summary.csv")).unwrap();
    assert!(summary.contains("apportioned"), "{summary}");
}
