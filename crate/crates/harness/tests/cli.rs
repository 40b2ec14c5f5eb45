use std::path::Path;
use std::process::{Command, Output};

fn cec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cec")).args(args).output().expect("cec runs")
}

fn ok(args: &[&str]) -> String {
    let out = cec(args);
    assert!(out.status.success(), "cec {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_scenario_and_topology() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["generate", "--preset", "abilene", "--seed", "4", "--out", path(dir.path())]);
    assert!(stdout.contains("11 nodes, 28 links"), "{stdout}");
    let scenario = std::fs::read_to_string(dir.path().join("abilene_4.scenario.json")).unwrap();
    cec_core::Scenario::from_json(&scenario).unwrap();
    let topology: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("abilene_4.topology.json")).unwrap()).unwrap();
    assert_eq!(topology["edges"].as_array().unwrap().len(), 14);
}

#[test]
fn solved_strategy_can_be_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["solve", "--preset", "connected-er", "--desk", "--seed", "0", "--algo", "sgp", "--trace", "--out", path(out)]);
    for file in ["scenario.json", "record.json", "trajectory.csv", "strategy.json", "trace.jsonl"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let trace = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "TypeI");

    ok(&[
        "certify",
        "--scenario",
        path(&out.join("scenario.json")),
        "--strategy",
        path(&out.join("strategy.json")),
        "--out",
        path(out),
    ]);
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    let lower = cert["lower_bound"].as_f64().unwrap();
    let cost = cert["strategy_cost"].as_f64().unwrap();
    assert!(lower <= cost + 1e-9);
    assert!(cert["relative_excess"].as_f64().unwrap() < 0.05);
}

#[test]
fn compare_writes_bars_with_one_row_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["compare", "--preset", "abilene", "--desk", "--seed", "3", "--algo", "sgp,lpr", "--max-iters", "200", "--out", path(out)]);
    let mut bars = csv::Reader::from_path(out.join("bars.csv")).unwrap();
    let headers = bars.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = bars.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let algo = headers.iter().position(|h| h == "algorithm").unwrap();
    assert_eq!(&rows[0][algo], "sgp");
    assert!(out.join("records.json").exists());
    assert!(out.join("scenarios").join("abilene_3.json").exists());
}

#[test]
fn async_and_delayed_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [&["--async"][..], &["--delay", "1.5"][..]] {
        let mut args = vec!["solve", "--preset", "abilene", "--desk", "--seed", "1", "--algo", "sgp", "--max-iters", "300"];
        args.extend_from_slice(mode);
        args.extend_from_slice(&["--out", path(dir.path())]);
        let stdout = ok(&args);
        assert!(stdout.starts_with("sgp: cost"), "{stdout}");
    }
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = cec(&["solve", "--preset", "abilene", "--algo", "sgp,gp", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly one algorithm"));

    let out = cec(&["generate", "--preset", "nowhere", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));

    let out = cec(&["sweep", "--preset", "abilene", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no sweep"));
}
