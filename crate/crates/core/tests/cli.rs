use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn flk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flk")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = flk(args);
    assert!(out.status.success(), "flk {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_code(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().find(|l| l.contains("\"error\"")).expect("no error line");
    let v: Value = serde_json::from_str(line).unwrap();
    v["error"]["code"].as_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn file_pipeline_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    let lift = dir.path().join("lift.json");
    let eval = dir.path().join("eval.json");
    let report = dir.path().join("report.json");
    ok(&["synth", "--seed", "3", "--out", p(&scene)]);
    ok(&["lift", "--scene", p(&scene), "--out", p(&lift)]);
    ok(&["eval", "nmlc", "--lift", p(&lift), "--out", p(&eval), "--report", p(&report)]);
    let doc = json(&eval);
    assert_eq!(doc["schema_version"], 1);
    assert!(doc["value_x100"].as_f64().unwrap() < 1e-4);
    let r = json(&report);
    assert_eq!(r["command"], "eval");
    assert!(r["wall_time_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["outputs"][0], p(&eval));
}

#[test]
fn eval_with_map_and_definition() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    let lift = dir.path().join("lift.json");
    let def = dir.path().join("def.json");
    let out = dir.path().join("eval.json");
    ok(&["synth", "--seed", "4", "--out", p(&scene)]);
    ok(&["lift", "--scene", p(&scene), "--out", p(&lift)]);

    // the 68-point landmarks read their 98-point sources, whose vertices are themselves
    let map = json(Path::new(&data("map_98_to_68.json")));
    let doc = serde_json::json!({ "schema_version": 1, "assignment": map["map"] });
    fs::write(&def, doc.to_string()).unwrap();
    ok(&["eval", "nme", "--lift", p(&lift), "--map", &data("map_98_to_68.json"), "--definition", p(&def), "--out", p(&out)]);
    let e = json(&out);
    assert_eq!(e["landmarks"], 68);
    assert!(e["value_x100"].as_f64().unwrap() < 1e-4);

    // a definition shifted by one vertex is far off
    let shifted: Vec<u64> = map["map"].as_array().unwrap().iter().map(|v| (v.as_u64().unwrap() + 1) % 96).collect();
    fs::write(&def, serde_json::json!({ "schema_version": 1, "assignment": shifted }).to_string()).unwrap();
    ok(&["eval", "nme", "--lift", p(&lift), "--map", &data("map_98_to_68.json"), "--definition", p(&def), "--out", p(&out)]);
    assert!(json(&out)["value_x100"].as_f64().unwrap() > 1.0);
}

#[test]
fn usage_errors_exit_one() {
    let out = flk(&["lift", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "usage");
    assert_eq!(flk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(flk(&["--help"]).status.code(), Some(0));
}

#[test]
fn input_errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = flk(&["lift", "--scene", p(&dir.path().join("absent.json"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_code(&missing), "missing_file");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = flk(&["lift", "--scene", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "malformed_json");

    fs::write(&bad, r#"{"schema_version": 7}"#).unwrap();
    assert_eq!(error_code(&flk(&["lift", "--scene", p(&bad)])), "schema_version");
    fs::write(&bad, r#"{"schema_version": 1, "views": 3}"#).unwrap();
    assert_eq!(error_code(&flk(&["lift", "--scene", p(&bad)])), "schema_violation");
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&["synth", "--seed", "9", "--noise", "laplacian", "--dropout", "0.1", "--out", p(&a)]);
    ok(&["synth", "--seed", "9", "--noise", "laplacian", "--dropout", "0.1", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    ok(&["sample-cameras", "--seed", "5", "--count", "30", "--out", p(&a)]);
    ok(&["sample-cameras", "--seed", "5", "--count", "30", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn parallel_lift_of_several_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let scenes: Vec<_> = (0..3).map(|i| dir.path().join(format!("s{i}.json"))).collect();
    for (i, s) in scenes.iter().enumerate() {
        ok(&["synth", "--seed", &i.to_string(), "--noise", "gaussian", "--out", p(s)]);
    }
    let out = dir.path().join("lifted");
    let mut args = vec!["lift", "--jobs", "3", "--out", p(&out)];
    for s in &scenes {
        args.extend(["--scene", p(s)]);
    }
    ok(&args);
    for i in 0..3 {
        let doc = json(&out.join(format!("s{i}.lift.json")));
        assert_eq!(doc["landmarks3d"]["points"].as_array().unwrap().len(), 98);
    }
}

#[test]
fn fit_a_scene_view() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    let fit = dir.path().join("fit.json");
    let csv = dir.path().join("fit.csv");
    ok(&["synth", "--seed", "2", "--out", p(&scene)]);
    ok(&["fit", "--detections", p(&scene), "--view", "20", "--out", p(&fit), "--csv", p(&csv)]);
    let doc = json(&fit);
    let entry = &doc["fits"][0];
    assert!(entry["error"].is_null());
    assert!(entry["result"]["final_cost"].as_f64().unwrap().is_finite());
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 1);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    ok(&["gradcheck", "--seed", "1", "--draws", "50", "--out", p(&out)]);
    let doc = json(&out);
    assert_eq!(doc["passed"], true);
    assert!(doc["lll_2d"].as_f64().unwrap() < 1e-5);
}

#[test]
fn sample_cameras_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv) = (dir.path().join("c.json"), dir.path().join("c.csv"));
    ok(&["sample-cameras", "--seed", "8", "--count", "20", "--out", p(&out), "--csv", p(&csv)]);
    assert_eq!(json(&out)["poses"].as_array().unwrap().len(), 20);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("alpha_deg,beta_deg,gamma_deg"));
}
