use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn multicarve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multicarve")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

const FIXTURE_ARGS: [&str; 6] = ["--B", "5", "--frac", "0.75", "--seed", "3"];

#[test]
fn run_reproduces_checked_in_report() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (data("x.csv"), data("y.csv"));
    let mut args = vec!["run", "--x", path(&x), "--y", path(&y), "--out", path(dir.path())];
    args.extend(FIXTURE_ARGS);
    let out = multicarve(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["report.json", "report.csv"] {
        let got = fs::read(dir.path().join(name)).unwrap();
        let want = fs::read(data(&format!("expected_{name}"))).unwrap();
        assert!(got == want, "{name} differs from the checked-in copy");
    }
}

#[test]
fn csv_summary_goes_to_stdout_without_out_dir() {
    let (x, y) = (data("x.csv"), data("y.csv"));
    let mut args = vec!["run", "--x", path(&x), "--y", path(&y)];
    args.extend(FIXTURE_ARGS);
    let out = multicarve(&args);
    assert!(out.status.success());
    assert_eq!(out.stdout, fs::read(data("expected_report.csv")).unwrap());
}

#[test]
fn malformed_input_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    let y = dir.path().join("y.csv");
    fs::write(&y, "1\n2\n").unwrap();
    let out = multicarve(&["run", "--x", path(&bad), "--y", path(&y)]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 2") && msg.contains("column 2"), "{msg}");

    let (x, y) = (data("x.csv"), data("y.csv"));
    let out = multicarve(&["run", "--x", path(&x), "--y", path(&y), "--frac", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = multicarve(&["run", "--x", path(&x), "--y", path(&y), "--gamma", "0.5", "--gamma-min", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn group_without_selected_members_gets_one() {
    let (x, y, groups) = (data("x.csv"), data("y.csv"), data("groups.txt"));
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["group", "--x", path(&x), "--y", path(&y), "--groups", path(&groups), "--out", path(dir.path())];
    args.extend(FIXTURE_ARGS);
    let out = multicarve(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let second: Vec<u64> = report["groups"][1].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    for split in report["splits"].as_array().unwrap() {
        for j in split["support"].as_array().unwrap() {
            assert!(!second.contains(&j.as_u64().unwrap()), "group 1 must be disjoint from every selection");
        }
    }
    assert_eq!(report["aggregated"][1].as_f64(), Some(1.0));
    assert!(report["aggregated"][0].as_f64().unwrap() < 0.05);
}

const SMALL_SIM: &str = "
design = toeplitz
n = 50
p = 40
active = 0,5
coef = 1.5
sigma = 1
runs = 1
B = 1,3
frac = 0.75
gamma_min = 0.05,0.3
selector = lambda:0.15
sigma_mode = known:1
";

#[test]
fn simulate_writes_one_row_per_method_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.cfg");
    fs::write(&cfg, SMALL_SIM).unwrap();
    let first = dir.path().join("first");
    let out = multicarve(&["simulate", "--config", path(&cfg), "--out", path(&first)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(first.join("metrics.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, ["design", "family", "B", "f", "gamma_mode", "view", "metric", "value", "mc_se", "runs"]);
    // single carving plus two optimized-quantile multicarve methods
    let fwer_rows: Vec<&str> = csv.lines().filter(|l| l.split(',').nth(6) == Some("fwer")).collect();
    assert_eq!(fwer_rows.len(), 3, "{csv}");
    assert!(fwer_rows.iter().all(|l| l.ends_with(",1")));

    let second = dir.path().join("second");
    let archive = first.join("archive.jsonl");
    let out = multicarve(&["simulate", "--replay", path(&archive), "--out", path(&second)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["metrics.csv", "metrics.json", "plot.csv"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
    assert!(!second.join("archive.jsonl").exists());
}

#[test]
fn selftest_reports_every_suite() {
    let out = multicarve(&["selftest", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let suites: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let suites = suites.as_array().unwrap();
    assert_eq!(suites.len(), 5);
    assert!(suites.iter().all(|s| s["passed"] == serde_json::Value::Bool(true)));
}
