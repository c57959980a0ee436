use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcheck")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report")
}

#[test]
fn flow_reports_fig2_insets() {
    let out = run(&["--json", "flow", &data("fig2.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let rows = v["details"]["nodes"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    let y = rows.iter().find(|r| r["node"] == 6).unwrap();
    assert_eq!(y["key"], 6);
    let text = String::from_utf8(run(&["flow", &data("fig2.json")]).stdout).unwrap();
    assert!(text.contains("inset (4,8)"));
    assert!(text.contains("inset (4,15)"));
}

#[test]
fn flow_dot_output() {
    let out = run(&["flow", "--dot", &data("fig2.json")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("digraph"));
}

#[test]
fn flow_iteration_bound_is_inconclusive() {
    let out = run(&["--max-iter", "0", "flow", &data("fig2.json")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_file_is_input_error() {
    let out = run(&["check", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_input_error() {
    let out = run(&["--bogus", "flow", &data("fig2.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
}

#[test]
fn eq_estimator_fails_key_copy() {
    let out = run(&["--json", "check", &data("remove_complex_eq.json")]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["verdict"], "fail");
    assert!(v["counterexample"].is_object());
    let last = v["details"].as_array().unwrap().last().unwrap().clone();
    assert!(last["label"].as_str().unwrap().contains("copy key"));
}

#[test]
fn bundled_scenarios() {
    for (name, code) in [
        ("remove_simple.json", 0),
        ("remove_complex.json", 0),
        ("rotate.json", 0),
        ("ops.json", 0),
        ("registry.json", 0),
        ("og.json", 0),
        ("frame_vs_context.json", 1),
        ("og_planted.json", 1),
    ] {
        let out = run(&["check", &data(name)]);
        assert_eq!(out.status.code(), Some(code), "{name}");
    }
}

#[test]
fn json_reports_are_deterministic() {
    let a = run(&["--json", "--seed", "7", "fuzz", "--sequences", "20", "--ops", "30"]);
    let b = run(&["--json", "--seed", "7", "fuzz", "--sequences", "20", "--ops", "30"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn oracle_keyset_disjoint() {
    let out = run(&["--json", "oracle", "--theorem", "KeysetDisjoint", "--cases", "200"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["details"]["cases"], 200);
}

#[test]
fn oracle_unknown_theorem() {
    assert_eq!(run(&["oracle", "--theorem", "Fermat"]).status.code(), Some(2));
}
