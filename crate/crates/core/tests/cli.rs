use std::path::Path;
use std::process::{Command, Output};

fn gradedfem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradedfem"))
        .args(args)
        .env("GRADEDFEM_THREADS", "2")
        .output()
        .unwrap()
}

fn run_in(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--out", out];
    args.extend_from_slice(extra);
    gradedfem(&args)
}

#[test]
fn reports_are_deterministic_and_embed_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--h", "0.4,0.2", "--shift", "random(7,10)"];
    // the output directory is part of the embedded config, so reuse it
    let report = tmp.path().join("report.json");
    let a = run_in(tmp.path(), &args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let ra = std::fs::read(&report).unwrap();
    std::fs::remove_file(&report).unwrap();
    let b = run_in(tmp.path(), &args);
    assert_eq!(b.status.code(), Some(0));
    let rb = std::fs::read(&report).unwrap();
    assert!(ra == rb, "reports differ");
    let v: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    let config = &v["config"];
    for key in ["problem", "omega", "p", "regularity", "gamma", "beta", "tau", "h", "shift", "fix", "solver", "seed"] {
        assert!(!config[key].is_null(), "config.{key} missing");
    }
    // gamma resolved from "auto"
    assert!(config["gamma"].as_f64().unwrap() > 3.0);
}

#[test]
fn config_file_round_trips_through_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let first = run_in(&tmp.path().join("a"), &["--h", "0.4,0.2", "--p", "1"]);
    assert_eq!(first.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("a/report.json")).unwrap()).unwrap();
    let mut config = v["config"].clone();
    config["out"] = serde_json::Value::String(tmp.path().join("b").to_str().unwrap().into());
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, config.to_string()).unwrap();
    let second = gradedfem(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0), "{}", String::from_utf8_lossy(&second.stderr));
    let ra: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("a/report.json")).unwrap()).unwrap();
    let rb: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("b/report.json")).unwrap()).unwrap();
    assert_eq!(ra["series"], rb["series"]);
}

#[test]
fn bad_configuration_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--problem", "polygon"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("polygon"));
    let out = run_in(tmp.path(), &["--h", "0.2,-0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"omgea": 4.0}"#).unwrap();
    let out = gradedfem(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_check_code() {
    // an oversized ghost penalty locks the coarse solutions
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--tau", "10000", "--h", "0.4,0.2,0.1", "--check"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn polygon_problem_and_field_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let poly = tmp.path().join("poly.json");
    std::fs::write(
        &poly,
        r#"{"vertices": [[0,0],[0.8,0],[0.8,0.8],[-0.8,0.8],[-0.8,-0.8],[0,-0.8]], "corner_index": 0}"#,
    )
    .unwrap();
    let out = run_in(
        tmp.path(),
        &["--problem", "polygon", "--polygon", poly.to_str().unwrap(), "--h", "0.4,0.2", "--dump-field"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let vtk = std::fs::read_to_string(tmp.path().join("field.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version"));
}
