use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rflab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rflab")).args(args).current_dir(dir).output().expect("spawn rflab")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn validate_accepts_catalog_space() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&rflab(&["validate", "so4_full_flag"], dir.path()));
    assert_eq!(v["passed"], true);
}

#[test]
fn validate_reads_json_file() {
    let dir = tempfile::tempdir().unwrap();
    let entry = rflab::catalog::lookup("su3_full_flag").unwrap();
    let text = rflab::formats::space_to_json(entry.space_spec().unwrap());
    std::fs::write(dir.path().join("flag.json"), text).unwrap();
    let v = json(&rflab(&["validate", "flag.json"], dir.path()));
    assert_eq!(v["passed"], true);

    std::fs::write(dir.path().join("broken.json"), "{\"dim\": 3}").unwrap();
    let out = rflab(&["validate", "broken.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn einstein_finds_flag_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&rflab(&["einstein", "su3_full_flag", "--seeds", "8"], dir.path()));
    let points = v["points"].as_array().unwrap();
    let ke = points.iter().find(|p| p["coindex"] == 1).expect("Kähler-Einstein point");
    let mut spectrum: Vec<f64> = ke["hessian_spectrum"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    spectrum.sort_by(f64::total_cmp);
    for (got, want) in spectrum.iter().zip([-1.0 / 3.0, 0.0, 4.0 / 3.0]) {
        assert!((got - want).abs() < 1e-6, "{spectrum:?}");
    }
}

#[test]
fn coindex_of_named_metric() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&rflab(&["coindex", "su3_full_flag", "--at", "1,1,1"], dir.path()));
    assert_eq!(v["point"]["coindex"], 2);
    let model = json(&rflab(&["coindex", "su3_full_flag", "--at", "1,1,1", "--backend", "model"], dir.path()));
    assert_eq!(model["point"]["coindex"], 2);
}

#[test]
fn bad_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rflab(&["validate", "no_such_space"], dir.path()).status.code(), Some(2));
    assert_eq!(rflab(&["coindex", "su3_full_flag", "--at", "1,nan,1"], dir.path()).status.code(), Some(2));
    assert_eq!(rflab(&["coindex", "su3_full_flag", "--at", "1,1"], dir.path()).status.code(), Some(2));
    assert_eq!(rflab(&["flow", "su3_full_flag", "--kind", "rf", "--from", "1,-1,1", "--t1", "1"], dir.path()).status.code(), Some(2));
    assert_eq!(rflab(&["ancient", "su3_group", "--base-einstein", "ke", "--eps", "0.1"], dir.path()).status.code(), Some(2));
}

#[test]
fn flow_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["flow", "su3_full_flag", "--kind", "nrf", "--from", "1,2,3", "--t1", "1"];
    let a = [&args[..], &["-o", "a.csv"]].concat();
    let b = [&args[..], &["-o", "b.csv"]].concat();
    json(&rflab(&a, dir.path()));
    json(&rflab(&b, dir.path()));
    let first = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("b.csv")).unwrap());
    let table = rflab::formats::parse_trajectory_csv(std::str::from_utf8(&first).unwrap()).unwrap();
    assert!(table.rows.len() > 2);

    let m: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.manifest.json")).unwrap()).unwrap();
    let n: Value = serde_json::from_slice(&std::fs::read(dir.path().join("b.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_hash"], n["config_hash"]);
    assert_eq!(m["catalog_id"], "su3_full_flag");
}

#[test]
fn projected_flow_and_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    json(&rflab(&["flow", "su3_group", "--kind", "prf", "--base", "ke", "--from", "1", "--t1", "2", "-o", "p.csv"], dir.path()));
    let out = rflab(&["plotdata", "p.csv", "--columns", "t,scal", "--max-points", "4"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,scal");
    assert!(lines.len() <= 6);
    assert!(lines.last().unwrap().starts_with("2.0000000000000000e0,"));

    let missing = rflab(&["plotdata", "p.csv", "--columns", "t,nope"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let no_base = rflab(&["flow", "su3_group", "--kind", "prf", "--from", "1", "--t1", "1"], dir.path());
    assert_eq!(no_base.status.code(), Some(2));
}

#[test]
fn ancient_scan_recovers_three_parameter_family() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&rflab(&["ancient", "su3_group", "--base-einstein", "ke", "-o", "shots.jsonl", "--trajectories", "traj"], dir.path()));
    assert_eq!(v["family_dimension"], 3);
    assert_eq!(v["unstable_dim"], 4);
    let text = std::fs::read_to_string(dir.path().join("shots.jsonl")).unwrap();
    let records = rflab::formats::parse_jsonl(&text).unwrap();
    assert_eq!(records.len(), 8);
    for r in records.iter().filter(|r| r["accepted"] == true) {
        let path = dir.path().join(r["trajectory"].as_str().unwrap());
        assert!(path.is_file());
    }
    assert!(dir.path().join("shots.manifest.json").is_file());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_rflab"))
            .args(["ancient", "su3_group", "--base-einstein", "ke", "--scan", "4"])
            .env("RFLAB_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        json(&out)
    };
    assert_eq!(run("1")["records"], run("4")["records"]);
    let bad = Command::new(env!("CARGO_BIN_EXE_rflab")).args(["validate", "su2"]).env("RFLAB_THREADS", "0").output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn single_direction_shot() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&rflab(&["ancient", "su3_group", "--base-einstein", "ke", "--dir", "1,0,1,0"], dir.path()));
    assert_eq!(v["shots"], 1);
    assert_eq!(rflab(&["ancient", "su3_group", "--base-einstein", "ke", "--dir", "1,0"], dir.path()).status.code(), Some(2));
}
