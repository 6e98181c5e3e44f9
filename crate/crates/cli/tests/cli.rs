use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn netmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netmax")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn small_config(dir: &Path, protocols: &str) -> String {
    let text = format!(
        r#"{{
  "topology": {{ "kind": "fully_connected", "nodes": 4 }},
  "link_times": {{ "compute": 1.0, "comm": {{ "kind": "uniform", "value": 1.0 }} }},
  "loss": {{ "dim": 2, "sigma": 0.01, "nodes": {{ "kind": "generated", "mu": 1.0, "lips": 2.0, "center_scale": 0.5 }} }},
  "init": {{ "kind": "common", "value": 3.0 }},
  "stop": {{ "max_time": 50.0, "target_epsilon": 0.1 }},
  "seeds": [0, 1],
  "protocols": {protocols}
}}"#
    );
    write(dir, "small.json", &text)
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = netmax(&["run", "--config", &configs().join("small_ring.json").display().to_string(), "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 1);
    assert!(out.join("summary.json").exists());
}

#[test]
fn malformed_config_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", "{\n  \"topology\": [1,\n");
    let o = netmax(&["run", "--config", &p]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn seed_and_overrides_reach_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["netmax", "uniform_async"]"#);
    let out = dir.path().join("o");
    let o = netmax(&["run", "--config", &cfg, "--seed", "7", "--override", "stop.max_time=20", "--protocol", "uniform-async", "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["seed"], 7);
    assert_eq!(summary["config"]["stop"]["max_time"], 20.0);
    assert_eq!(summary["protocol"], "uniform_async");
    let bad = netmax(&["run", "--config", &cfg, "--override", "alpha=-1"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn policy_command() {
    let dir = tempfile::tempdir().unwrap();
    let two = write(dir.path(), "t2.json", "[[0, 1], [1, 0]]");
    let o = netmax(&["policy", "--times", &two]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["policy"], serde_json::json!([[0.0, 1.0], [1.0, 0.0]]));
    assert!(v["lambda2"].as_f64().unwrap() < 1.0);
    let ns = write(dir.path(), "ns.json", "[[0, 1, 1], [1, 0, 1]]");
    assert_eq!(code(&netmax(&["policy", "--times", &ns])), 1);
    // one outer round puts rho at 0.5/alpha, whose edge floor exceeds 1
    assert_eq!(code(&netmax(&["policy", "--times", &two, "--outer-rounds", "1"])), 3);
}

#[test]
fn compare_needs_two_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let single = small_config(dir.path(), r#"["netmax"]"#);
    assert_eq!(code(&netmax(&["compare", "--config", &single])), 1);
    let both = small_config(dir.path(), r#"["netmax", "uniform_async"]"#);
    let out = dir.path().join("cmp");
    let o = netmax(&["compare", "--config", &both, "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert!(out.join("comparison.json").exists());
}

#[test]
fn verify_suites() {
    let o = netmax(&["verify", "policy", "--topologies", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).all(|l| l.contains("policy")));
    assert_eq!(code(&netmax(&["verify", "bounds"])), 0);
    assert_eq!(code(&netmax(&["verify", "policy", "--topologies", "20", "--margin", "-1"])), 4);
    assert_eq!(code(&netmax(&["verify", "nonsense"])), 1);
}

#[test]
fn full_verify_passes_within_budget() {
    let start = std::time::Instant::now();
    let o = netmax(&["verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(start.elapsed().as_secs() < 300);
}
