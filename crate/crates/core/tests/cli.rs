use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn leafwise(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafwise"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn csv_rows(out: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(out.join("components.csv")).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn t3_scenario_reports_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("t3_hyperbolic.json");
    let out = leafwise(&["lefschetz", path_str(&s)], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert!((r["result"]["value"].as_f64().unwrap() + 1.0).abs() < 1e-5);
    assert_eq!(r["status"], "ok");
    let (header, rows) = csv_rows(dir.path());
    assert_eq!(header, ["component", "point", "x0", "x1", "x2", "sign", "kind", "closed"]);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[0] == "0" && r[7] == "true"));
}

#[test]
fn sine_scenario_has_two_circles() {
    let dir = tempfile::tempdir().unwrap();
    let out = leafwise(&["lefschetz", path_str(&scenario("t2_sine.json"))], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (_, rows) = csv_rows(dir.path());
    let mut ids: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    ids.dedup();
    assert_eq!(ids, ["0", "1"]);
    let signs: Vec<&str> = rows.iter().map(|r| r[4].as_str()).collect();
    assert!(signs.contains(&"-1") && signs.contains(&"1"));
}

#[test]
fn wavy_density_fails_measure_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = leafwise(&["check-measure", path_str(&scenario("suspension_not_invariant.json"))], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let r = report(dir.path());
    assert_eq!(r["status"], "verification-failed");
    let probes = r["result"]["probes"].as_array().unwrap();
    assert_eq!(probes[0]["t"], 0.0);
    assert!(probes[0]["violation"].as_f64().unwrap() >= 0.4);

    let dir = tempfile::tempdir().unwrap();
    let out = leafwise(&["check-measure", path_str(&scenario("suspension_invariant.json"))], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_measure_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("t2_sine.json")).unwrap();
    let text = text.replace("  \"measure\": { \"kind\": \"lebesgue\" },\n", "");
    let path = dir.path().join("no_measure.json");
    fs::write(&path, text).unwrap();
    let out = leafwise(&["lefschetz", path_str(&path)], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line ") && err.contains("measure"), "{err}");
    assert!(!dir.path().join("out/report.json").exists());
}

#[test]
fn syntax_error_points_at_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\n  \"atlas\": {\n    \"model\": \"linear-torus\",\n    \"n\": 2,,\n  }\n}\n").unwrap();
    let out = leafwise(&["fix", path_str(&path)], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn empty_fixed_set_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shift.json");
    fs::write(
        &path,
        r#"{
  "atlas": { "model": "linear-torus", "n": 2, "leaf_axes": [1] },
  "maps": [{ "name": "shift", "role": "phi", "family": "translation", "offset": [0.0, 0.3] }]
}"#,
    )
    .unwrap();
    let out = leafwise(&["fix", path_str(&path)], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("components.csv")).unwrap();
    assert_eq!(text, "component,point,x0,x1,sign,kind,closed\n");
}

#[test]
fn exhausted_perturbation_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("degenerate.json")).unwrap();
    let text = text.replace("\"seed\": 0", "\"seed\": 0, \"start_radius\": 0.0");
    let path = dir.path().join("stuck.json");
    fs::write(&path, text).unwrap();
    let out = leafwise(&["lefschetz", path_str(&path), "--max-attempts", "2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let r = report(dir.path());
    assert_eq!(r["result"]["detail"]["attempts"], 2);
}

#[test]
fn trace_rhs_needs_a_transverse_fixed_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = leafwise(&["trace-rhs", path_str(&scenario("degenerate.json"))], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = leafwise(&["trace-rhs", path_str(&scenario("t2_sine.json"))], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn composite_scenario_runs_coin() {
    let dir = tempfile::tempdir().unwrap();
    let out = leafwise(&["coin", path_str(&scenario("composite.json"))], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(report(dir.path())["result"]["value"].as_f64().unwrap().abs() < 1e-5);
}

#[test]
fn reports_are_deterministic_and_replayable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = scenario("degenerate.json");
    let args = ["lefschetz", path_str(&s), "--seed", "5", "--grid", "48"];
    assert_eq!(leafwise(&args, a.path()).status.code(), Some(0));
    assert_eq!(leafwise(&args, b.path()).status.code(), Some(0));
    let text = |d: &Path, f: &str| fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(text(a.path(), "report.json"), text(b.path(), "report.json"));
    assert_eq!(text(a.path(), "components.csv"), text(b.path(), "components.csv"));

    let first = report(a.path());
    let mut replay: Value = serde_json::from_str(&fs::read_to_string(&s).unwrap()).unwrap();
    replay["run"] = first["provenance"]["run"].clone();
    let c = tempfile::tempdir().unwrap();
    let path = c.path().join("replay.json");
    fs::write(&path, serde_json::to_string_pretty(&replay).unwrap()).unwrap();
    assert_eq!(leafwise(&["lefschetz", path_str(&path)], c.path()).status.code(), Some(0));
    assert_eq!(report(c.path())["result"]["value"], first["result"]["value"]);
    assert_eq!(report(c.path())["provenance"]["search"], first["provenance"]["search"]);
}
