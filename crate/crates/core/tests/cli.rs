mod common;

use std::path::Path;
use std::process::{Command, Output};

fn fungisync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fungisync"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    common::scenarios_dir()
        .join(format!("{name}.json"))
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_verify_compares() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let sc = scenario("two_agent_touch");
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = fungisync(&["run", &sc, "--seed", seed, "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["events.ndjson", "metrics.json", "digest.txt"] {
            assert!(out.join(f).exists(), "{f}");
        }
    }
    let digest = std::fs::read_to_string(a.join("digest.txt")).unwrap();
    assert_eq!(digest.trim().len(), 16);

    let same = fungisync(&["verify", s(&a.join("events.ndjson")), s(&b.join("events.ndjson"))]);
    assert_eq!(same.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&same.stdout).trim(), "equal");

    let diff = fungisync(&["verify", s(&a.join("events.ndjson")), s(&c.join("events.ndjson"))]);
    assert_eq!(diff.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&diff.stdout).starts_with("diverged at tick 0"));

    let m = fungisync(&["metrics", s(&a.join("events.ndjson"))]);
    assert!(m.status.success());
    let recomputed: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(recomputed, written);
}

#[test]
fn exit_codes_separate_invalid_input_from_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"duration": 5, "dt": 0}"#).unwrap();
    assert_eq!(fungisync(&["run", s(&bad), "--out", s(dir.path())]).status.code(), Some(1));

    std::fs::write(&bad, r#"{"duration": 5, "unknown": 1}"#).unwrap();
    assert_eq!(fungisync(&["run", s(&bad), "--out", s(dir.path())]).status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    assert_eq!(fungisync(&["run", s(&missing)]).status.code(), Some(2));
    assert_eq!(fungisync(&["metrics", s(&missing)]).status.code(), Some(2));
}
