//! Black-box checks of the command-line binary: exit codes, report files,
//! error reporting, and byte-stable output.

mod common;

use common::fixture_path;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_reports_and_exits_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = evade(&["run", &fixture_path("oncoming"), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("oncoming: collision=false"));

    let csv = fs::read_to_string(dir.path().join("oncoming.timeseries.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,v,a,mode,L,L_w,L_b,L_s,ttc_inv,"));
    let envelope = fs::read_to_string(dir.path().join("oncoming.envelope.csv")).unwrap();
    assert!(envelope.starts_with("step,t,y_min,y_max\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("oncoming.summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["name"], "oncoming");
    assert_eq!(summary["collision"], false);
    assert!(summary["mode_timeline"].as_array().unwrap().len() >= 3);
}

#[test]
fn collision_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = evade(&[
        "run",
        &fixture_path("infeasible_precrash"),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("infeasible_precrash.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["collision"], true);
    assert!(summary["rel_impact_speed"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let out = evade(&["run", "/no/such/scenario.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/no/such/scenario.json"));
}

#[test]
fn validate_accepts_every_bundled_fixture() {
    let fixtures = [
        "front_car_high",
        "front_car_low",
        "pedestrian_high",
        "pedestrian_low",
        "oncoming",
        "stationary_obstacle",
        "infeasible_precrash",
    ];
    let paths: Vec<String> = fixtures.iter().map(|n| fixture_path(n)).collect();
    let mut args = vec!["validate"];
    args.extend(paths.iter().map(String::as_str));
    let out = evade(&args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for name in fixtures {
        assert!(text.contains(&format!("ok ({name})")), "missing ok line for {name}");
    }
}

#[test]
fn validate_pinpoints_problems() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing_ego.json");
    fs::write(&missing, r#"{"name": "broken", "obstacles": []}"#).unwrap();
    let bad_field = dir.path().join("bad_field.json");
    fs::write(
        &bad_field,
        r#"{"name": "b", "ego": {"speed": 25.0}, "obstacles": [{"footprint": {"length": 4.5, "width": 0.0}, "gap": 50.0}]}"#,
    )
    .unwrap();
    let not_json = dir.path().join("not_json.json");
    fs::write(&not_json, "nope").unwrap();

    let out = evade(&[
        "validate",
        missing.to_str().unwrap(),
        bad_field.to_str().unwrap(),
        not_json.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("ego: missing"), "stderr: {err}");
    assert!(err.contains("obstacles[0].footprint.width: must be > 0"), "stderr: {err}");
    assert!(err.contains("invalid JSON"), "stderr: {err}");
}

#[test]
fn batch_runs_everything_and_flags_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures =
        ["front_car_high", "front_car_low", "oncoming", "infeasible_precrash"];
    let paths: Vec<String> = fixtures.iter().map(|n| fixture_path(n)).collect();
    let mut args = vec!["batch"];
    args.extend(paths.iter().map(String::as_str));
    args.extend(["--out-dir", dir.path().to_str().unwrap()]);
    let out = evade(&args);
    // The infeasible scenario collides, so the batch reports it.
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    for name in fixtures {
        assert!(text.contains(&format!("{name}: collision=")), "missing line for {name}");
        assert!(dir.path().join(format!("{name}.summary.json")).exists());
    }
}

#[test]
fn reruns_write_identical_bytes() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = evade(&[
            "run",
            &fixture_path("front_car_high"),
            "--out-dir",
            dir.path().to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let mut names: Vec<String> = fs::read_dir(dir_a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec![
            "front_car_high.envelope.csv",
            "front_car_high.summary.json",
            "front_car_high.timeseries.csv"
        ]
    );
    for name in &names {
        let a = fs::read(dir_a.path().join(name)).unwrap();
        let b = fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    assert_trailing_newlines(dir_a.path(), &names);
}

fn assert_trailing_newlines(dir: &Path, names: &[String]) {
    for name in names {
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(bytes.last(), Some(&b'\n'), "{name} must end with a newline");
    }
}

#[test]
fn selftest_smoke() {
    let out = evade(&["selftest", "--instances", "25", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("spot checks: ok"));
    assert!(text.contains("25"));
}
