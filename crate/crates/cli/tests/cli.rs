use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn roml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roml"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic dataset through `simulate` and returns its manifest.
fn simulated(dir: &Path, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec![
        "simulate", "--K", "6", "--d", "12", "--n", "3", "--outliers", "3", "--trials", "1",
        "--write-dataset", path_str(&data), "--out",
    ];
    let sim = dir.join("sim.json");
    args.push(path_str(&sim));
    args.extend_from_slice(extra);
    let o = roml(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    data.join("manifest.json")
}

fn write_manifest(dir: &Path, images: &[(&str, &str, Option<&str>)]) -> PathBuf {
    let mut entries = Vec::new();
    for (id, features, coords) in images {
        let f = format!("{id}.csv");
        fs::write(dir.join(&f), features).unwrap();
        let mut e = serde_json::json!({ "id": id, "feature_file": f });
        if let Some(c) = coords {
            let cf = format!("{id}_xy.csv");
            fs::write(dir.join(&cf), c).unwrap();
            e["coord_file"] = Value::String(cf);
        }
        entries.push(e);
    }
    let m = dir.join("manifest.json");
    fs::write(&m, serde_json::json!({ "version": 1, "images": entries }).to_string()).unwrap();
    m
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = roml(&["solve", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(roml(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(roml(&["--help"]).status.code(), Some(0));
}

#[test]
fn solve_reports_auto_lambda_and_recovers() {
    let dir = TempDir::new().unwrap();
    let manifest = simulated(dir.path(), &[]);
    let out = dir.path().join("solve.json");
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--n", "3", "--lambda", "auto", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("solve: converged"), "{}", stdout(&o));
    let r = read_json(&out);
    assert_eq!(r["format_version"], 1);
    let lambda = r["config"]["lambda"].as_f64().unwrap();
    assert!((lambda - 5.0 / 36f64.sqrt()).abs() < 1e-12);
    assert_eq!(r["config"]["lambda_rule"], "auto");
    assert_eq!(r["metrics"]["truth"]["recovery_rate"], 1.0);
    assert_eq!(r["ppms"].as_array().unwrap().len(), 6);
    let iters = r["metrics"]["iterations"].as_u64().unwrap() as usize;
    assert_eq!(r["residual_history"]["primal"].as_array().unwrap().len(), iters);
    assert_eq!(r["objective_history"].as_array().unwrap().len(), iters);
    assert!(r["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_echo_lists_defaults() {
    let dir = TempDir::new().unwrap();
    let manifest = simulated(dir.path(), &[]);
    let out = dir.path().join("r.json");
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--n", "3", "--max-iters", "5", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = &read_json(&out)["config"];
    assert_eq!(c["rho0"], 1e-4);
    assert_eq!(c["rho_factor"], 1.001);
    assert_eq!(c["kappa_r"], 0.08);
    assert_eq!(c["kappa_n"], 0.015);
    assert_eq!(c["defaults"]["delta"], 0.05);
    assert_eq!(c["defaults"]["xi"], 4.0);
    assert_eq!(c["defaults"]["coordinate"]["rho0"], 1e-6);
    assert_eq!(c["defaults"]["coordinate"]["rho_factor"], 1.0001);
    assert_eq!(c["defaults"]["max_iters"], 5000);
}

#[test]
fn reports_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let manifest = simulated(dir.path(), &["--err", "0.2"]);
    let run = |name: &str, parallel: &str| {
        let out = dir.path().join(name);
        let o = roml(&[
            "solve", "--manifest", path_str(&manifest), "--n", "3", "--seed", "4", "--max-iters", "400",
            "--parallel", parallel, "--out", path_str(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut r = read_json(&out);
        r.as_object_mut().unwrap().remove("wall_time_seconds");
        r
    };
    let a = run("a.json", "1");
    assert_eq!(a, run("b.json", "1"));
    let mut c = run("c.json", "2");
    c["config"]["parallel"] = 1.into();
    assert_eq!(a, c);
}

#[test]
fn simulate_prints_mean_recovery() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim.json");
    let o = roml(&[
        "simulate", "--K", "5", "--d", "10", "--n", "3", "--outliers", "2", "--err", "0.1", "--trials", "2",
        "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean recovery rate"), "{}", stdout(&o));
    let r = read_json(&out);
    assert_eq!(r["trials"].as_array().unwrap().len(), 2);
    let mean = r["metrics"]["mean_recovery_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
}

#[test]
fn simulate_coordinate_tracks() {
    let o = roml(&["simulate", "--coords", "--K", "4", "--n", "5", "--outliers", "1", "--trials", "1", "--max-iters", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["config"]["mode"], "coordinate");
    assert_eq!(r["config"]["rho0"], 1e-6);
    assert!((r["config"]["lambda"].as_f64().unwrap() - 5.0 / 8f64.sqrt()).abs() < 1e-12);
}

#[test]
fn estimate_n_reports_gamma_series() {
    let dir = TempDir::new().unwrap();
    let manifest = simulated(dir.path(), &[]);
    let out = dir.path().join("est.json");
    let o = roml(&["estimate-n", "--manifest", path_str(&manifest), "--delta", "0.05", "--n-max", "5", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    assert_eq!(r["metrics"]["n_hat"], 3);
    assert_eq!(r["metrics"]["found"], true);
    assert_eq!(r["metrics"]["gamma_series"].as_array().unwrap().len(), 4);
    assert_eq!(r["config"]["delta"], 0.05);
}

#[test]
fn detect_inliers_scores_against_truth() {
    let dir = TempDir::new().unwrap();
    let manifest = simulated(dir.path(), &[]);
    let out = dir.path().join("det.json");
    let o = roml(&["detect-inliers", "--manifest", path_str(&manifest), "--n", "3", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    assert_eq!(r["config"]["xi"], 4.0);
    assert_eq!(r["metrics"]["truth"]["precision"], 1.0);
    assert_eq!(r["metrics"]["truth"]["recall"], 1.0);
    assert_eq!(r["metrics"]["detected"], 18);
}

#[test]
fn oracle_on_tiny_instance() {
    let dir = TempDir::new().unwrap();
    let manifest = write_manifest(
        dir.path(),
        &[("a", "2,2\n1,0\n0,1\n", None), ("b", "2,2\n0,1\n1,0\n", None)],
    );
    let out = dir.path().join("o.json");
    let o = roml(&["oracle", "--manifest", path_str(&manifest), "--n", "1", "--norm-constant", "1", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    let opt = r["metrics"]["optimal_nuclear"].as_f64().unwrap();
    assert!((opt - 2f64.sqrt()).abs() < 1e-12, "{opt}");
    assert_eq!(r["ppms"][0]["sources"][0], 0);
    assert_eq!(r["ppms"][1]["sources"][0], 1);
}

#[test]
fn embed_writes_a_dataset() {
    let dir = TempDir::new().unwrap();
    let xy = "2,4\n0,8,16,24\n0,1,4,9\n";
    let desc = "4,4\n1,0,0,0\n0,1,0,0\n0,0,1,0\n0,0,0,1\n";
    let manifest = write_manifest(dir.path(), &[("a", desc, Some(xy)), ("b", desc, Some(xy))]);
    let out_dir = dir.path().join("emb");
    let o = roml(&["embed", "--manifest", path_str(&manifest), "--dim", "2", "--out-dir", path_str(&out_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_json(&out_dir.join("manifest.json"));
    assert_eq!(m["images"].as_array().unwrap().len(), 2);
    let a = fs::read_to_string(out_dir.join("a.csv")).unwrap();
    assert!(a.starts_with("2,4\n"), "{a}");

    let o = roml(&["embed", "--manifest", path_str(&manifest), "--dim", "9", "--out-dir", path_str(&out_dir)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn box_descriptors_select_one_per_image() {
    let dir = TempDir::new().unwrap();
    let f = "3,3\n1,0,0.9\n0,1,0.1\n0,0,0.2\n";
    let manifest = dir.path().join("manifest.json");
    for id in ["a", "b", "c"] {
        fs::write(dir.path().join(format!("{id}.csv")), f).unwrap();
    }
    let entry = |id: &str| {
        serde_json::json!({
            "id": id, "feature_file": format!("{id}.csv"),
            "aspect_ratios": [1.0, 0.5, 1.2], "objectness": [0.9, 0.2, 0.8]
        })
    };
    fs::write(
        &manifest,
        serde_json::json!({ "version": 1, "images": [entry("a"), entry("b"), entry("c")] }).to_string(),
    )
    .unwrap();
    let out = dir.path().join("col.json");
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--col", "--max-iters", "200", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    assert_eq!(r["config"]["n"], 1);
    assert_eq!(r["config"]["col"], true);
    assert_eq!(r["ppms"][0]["sources"].as_array().unwrap().len(), 1);

    let o = roml(&["solve", "--manifest", path_str(&manifest), "--col", "--n", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tracking_fixes_the_first_selection() {
    let dir = TempDir::new().unwrap();
    let manifest = simulated(dir.path(), &[]);
    let m = read_json(&manifest);
    let mut first: Vec<u64> = m["images"][0]["ground_truth"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    first.sort_unstable();
    let out = dir.path().join("t.json");
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--n", "3", "--track", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_json(&out);
    let got: Vec<u64> = r["ppms"][0]["sources"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(got, first);
    assert_eq!(r["metrics"]["truth"]["recovery_rate"], 1.0);
}

#[test]
fn input_errors_name_the_file() {
    let dir = TempDir::new().unwrap();
    let manifest = write_manifest(dir.path(), &[("a", "2,2\n1,0\n0,x\n", None), ("b", "2,2\n1,0\n0,1\n", None)]);
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--n", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("a.csv:3:2"), "{}", stderr(&o));

    let manifest = write_manifest(dir.path(), &[("a", "2,2\n1,0\n0,1\n", None), ("b", "3,2\n1,0\n0,1\n1,1\n", None)]);
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--n", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("a.csv") && err.contains("b.csv"), "{err}");

    let o = roml(&["solve", "--manifest", path_str(&dir.path().join("missing.json")), "--n", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = roml(&["solve", "--manifest", path_str(&manifest), "--n", "1", "--lambda", "-2"]);
    assert_eq!(o.status.code(), Some(1));
}
