use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_badapprox");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn delta_of_golden_is_one_third() {
    let out = run(&["delta", "--alpha", "golden"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["delta"], "1/3");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["construct", "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(run(&["construct", "--q0", "1", "--Q", "10"]).status.code(), Some(2));
    assert_eq!(run(&["construct", "--epsilon-log2", "3"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "/nonexistent/cert.json"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(BIN)
        .args(["delta"])
        .env("BADAPPROX_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_small_table() {
    let out = run(&["bounds", "--nu-max", "6", "--sigma", "2:64", "--json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], true);
    assert_eq!(v["partitions"].as_array().unwrap().len(), 7);
    assert_eq!(v["sums"][0]["holds"], true);
    let text = run(&["bounds", "--nu-max", "3"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("partition nu=3: exact"));
}

#[test]
fn construct_then_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("c.json");
    let trace = dir.path().join("t.csv");
    let out = run(&[
        "construct",
        "--epsilon-log2",
        "-6",
        "--q0",
        "16",
        "--Q",
        "200",
        "--out",
        cert.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(rows.lines().count(), 1 + 185);
    assert!(rows.starts_with("x,measure_num,measure_den,intervals_in_B\n16,"));

    let ok = run(&["verify", cert.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let check: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(check["passed"], true);

    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    doc["verified_min"] = "1".into();
    std::fs::write(&cert, doc.to_string()).unwrap();
    let bad = run(&["verify", cert.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("content hash mismatch"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"alpha":{"d":2,"a_num":"-1","a_den":"1","b_num":"1","b_den":"1"},
            "epsilon_log2":-7,"q0":8,"Q":100000,"mode":"greedy","strategy":"max-margin",
            "bits":40,"scan_limit":500,"paper_constants":false}"#,
    )
    .unwrap();
    let out = run(&["construct", "--config", cfg.to_str().unwrap(), "--Q", "120"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["Q"], 120);
    assert_eq!(v["config"]["mode"], "greedy");
    assert_eq!(v["config"]["strategy"], "max-margin");
    assert_eq!(v["config"]["alpha"]["d"], 2);
    assert_eq!(v["certified"], true);
}

#[test]
fn extinction_exits_1() {
    let out = run(&["construct", "--epsilon-log2", "-1", "--q0", "2", "--Q", "50"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("extinct"));
    assert!(out.stdout.is_empty());
}
