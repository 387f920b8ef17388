use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SCENARIO: &str = r#"
seed = 11
duration_ms = 120000

[[domains]]
zone_id = 1

[[domains]]
zone_id = 2

[[workload]]
sessions = 2
intra_rate = 20.0
"#;

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    fs::write(&scenario, SCENARIO).unwrap();
    (dir, scenario)
}

#[test]
fn validate_accepts_and_rejects() {
    let (dir, scenario) = setup();
    let ok = fedsim(&["validate", "--scenario", path(&scenario)]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("ok: 2 domains"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[[domains]]\nzone_id = 1\nvalidators = 4\nbyzantine = 2\n").unwrap();
    let out = fedsim(&["validate", "--scenario", path(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("zone 1"));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "seed = 1\nspeed = 2\n").unwrap();
    let out = fedsim(&["validate", "--scenario", path(&unknown)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));
}

#[test]
fn run_then_verify_log() {
    let (dir, scenario) = setup();
    let report = dir.path().join("report.json");
    let csv = dir.path().join("csv");
    let out = fedsim(&["run", "--scenario", path(&scenario), "--out", path(&report), "--csv", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = dir.path().join("report.events.jsonl");
    assert!(log.exists());
    assert!(fs::read_to_string(csv.join("sessions.csv")).unwrap().lines().count() == 3);

    let pass = fedsim(&["verify-log", "--report", path(&report), "--log", path(&log)]);
    assert!(pass.status.success());
    assert_eq!(String::from_utf8_lossy(&pass.stdout).trim(), "pass");

    let mut bytes = fs::read(&log).unwrap();
    let i = bytes.iter().position(|b| b.is_ascii_digit()).unwrap();
    bytes[i] = if bytes[i] == b'9' { b'8' } else { bytes[i] + 1 };
    let tampered = dir.path().join("tampered.jsonl");
    fs::write(&tampered, &bytes).unwrap();
    let fail = fedsim(&["verify-log", "--report", path(&report), "--log", path(&tampered)]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stdout).contains("does not match"));
}

#[test]
fn seed_override_changes_digest_and_repeats_exactly() {
    let (_dir, scenario) = setup();
    let a = fedsim(&["run", "--scenario", path(&scenario), "--seed", "5"]);
    let b = fedsim(&["run", "--scenario", path(&scenario), "--seed", "5"]);
    let c = fedsim(&["run", "--scenario", path(&scenario), "--seed", "6"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn batch_runs_and_summarizes() {
    let (dir, scenario) = setup();
    let out = dir.path().join("batch.json");
    let res = fedsim(&["batch", "--scenario", path(&scenario), "--runs", "2", "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"runs\": 2"));
    assert!(String::from_utf8_lossy(&res.stderr).contains("2 runs"));
}

#[test]
fn missing_file_is_an_error() {
    let out = fedsim(&["validate", "--scenario", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let out = fedsim(&["validate", "--scenario", path(&p)]);
            assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 4);
}
