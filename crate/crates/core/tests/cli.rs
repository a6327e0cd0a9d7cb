use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "preset": "toy",
  "general_samples": 600,
  "downstream_samples": 200,
  "rounds": 2,
  "lr": 0.1,
  "pretrain": {"target_accuracy": 0.9},
  "expansion": {"proxy_steps": 4, "proxy_samples": 80}
}"#;

fn fedbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedbe")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fedbe(&["run", "--config", "/no/such/file.json", "--out", "x"]).status.code(), Some(1));
    assert_eq!(fedbe(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fedbe(&["run", "--bogus"]).status.code(), Some(1));
    let cfg = write_config(dir.path(), r#"{"preset":"toy","method":"fedavg"}"#);
    assert_eq!(fedbe(&["partition", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(fedbe(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let out = fedbe(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("max error"));
    assert_eq!(fedbe(&["gradcheck", "--eps", "0.5"]).status.code(), Some(2));
}

#[test]
fn partition_prints_one_histogram_per_client() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = fedbe(&["partition", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    let total: u64 =
        lines.iter().flat_map(|l| l["histogram"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap())).sum();
    assert_eq!(total, 160);
}

#[test]
fn select_layers_prints_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = fedbe(&["select-layers", "--config", &cfg, "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["k"], 2);
    assert_eq!(plan["lambda"], 0.5);
    assert_eq!(plan["positions"].as_array().unwrap().len(), 2);
}

#[test]
fn run_writes_reproducible_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fedbe(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "summary.json", "accuracy.svg", "time.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("metrics.csv")).unwrap().lines().count(), 3);

    fs::remove_file(a.join("accuracy.svg")).unwrap();
    assert_eq!(fedbe(&["report", "--in", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("accuracy.svg")).unwrap(), fs::read(b.join("accuracy.svg")).unwrap());
    assert_eq!(fedbe(&["report", "--in", dir.path().join("missing").to_str().unwrap()]).status.code(), Some(2));
}
