//! End-to-end tests of the command-line surface, driving the built binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_irswpcn"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("irswpcn-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_data(dir: &Path, name: &str, m: u32, n: u32, pi: &str, samples: u32, seed: u64) -> PathBuf {
    let path = dir.join(name);
    run_ok(bin().args([
        "gen-data",
        "--m",
        &m.to_string(),
        "--n",
        &n.to_string(),
        "--pi-dbm",
        pi,
        "--samples",
        &samples.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]));
    path
}

#[test]
fn gen_data_is_byte_deterministic_with_documented_size() {
    let dir = tmp("gendata");
    let a = gen_data(&dir, "a.iwds", 2, 8, "off", 100, 7);
    let b = gen_data(&dir, "b.iwds", 2, 8, "off", 100, 7);
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b);
    // Header is 37 bytes; M=2, N=8 noise-limited features are 54 doubles.
    assert_eq!(bytes_a.len() as u64, 37 + 100 * 54 * 8);

    let c = gen_data(&dir, "c.iwds", 2, 8, "off", 100, 8);
    assert_ne!(bytes_a, std::fs::read(&c).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solver_commands_agree_across_thread_counts() {
    let dir = tmp("threads");
    let data = gen_data(&dir, "d.iwds", 1, 2, "off", 30, 3);
    let csv1 = dir.join("t1.csv");
    let csv4 = dir.join("t4.csv");
    run_ok(
        bin()
            .env("IRSWPCN_THREADS", "1")
            .args(["ga-opt", "--data", data.to_str().unwrap(), "--seed", "5"])
            .args(["--generations", "5", "--out", csv1.to_str().unwrap()]),
    );
    run_ok(
        bin()
            .env("IRSWPCN_THREADS", "4")
            .args(["ga-opt", "--data", data.to_str().unwrap(), "--seed", "5"])
            .args(["--generations", "5", "--out", csv4.to_str().unwrap()]),
    );
    assert_eq!(std::fs::read(&csv1).unwrap(), std::fs::read(&csv4).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn oracle_and_random_commands_run() {
    let dir = tmp("solvers");
    let data = gen_data(&dir, "d.iwds", 1, 2, "off", 10, 3);
    let out = run_ok(bin().args([
        "oracle",
        "--data",
        data.to_str().unwrap(),
        "--resolution",
        "32",
    ]));
    assert!(out.contains("oracle32: samples 10 mean_throughput"));
    let out = run_ok(bin().args([
        "random-baseline",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "4",
    ]));
    assert!(out.contains("random: samples 10"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mode_mismatch_is_a_usage_error() {
    let dir = tmp("mismatch");
    let data = gen_data(&dir, "d.iwds", 1, 2, "off", 5, 3);
    let out = bin()
        .args(["ga-opt", "--data", data.to_str().unwrap(), "--seed", "1", "--pi-dbm", "10"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: "), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_pipeline_emits_reports_and_roundtrips() {
    let dir = tmp("bench");
    let config = dir.join("exp.json");
    // Tiny end-to-end run: small nets, small data, three methods.
    std::fs::write(
        &config,
        format!(
            r#"{{
  "seed": 11,
  "out_dir": "{}",
  "points": [{{"antennas": 1, "elements": 2, "interferer_dbm": null}}],
  "data": {{"train": 600, "validation": 100, "test": 40}},
  "train": {{"batch_size": 100, "max_epochs": 3}},
  "methods": ["ga5", "irsnet", "random"]
}}"#,
            dir.display()
        ),
    )
    .unwrap();
    let out = run_ok(bin().args(["bench", "--config", config.to_str().unwrap()]));
    assert!(out.contains("ga5"), "{out}");
    assert!(out.contains("irsnet"));
    assert!(out.contains("random"));

    let report_path = dir.join("report.json");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["status"], "complete");
    let methods = report["points"][0]["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    // Three rate-ratio columns, anchored on ga5 (whose ratio is exactly 1).
    for m in methods {
        assert!(m["rate_ratio"].is_number());
        assert!(m["time_ratio"].is_number());
    }
    assert_eq!(methods[0]["method"], "ga5");
    assert_eq!(methods[0]["rate_ratio"], 1.0);
    assert!(report["points"][0]["test_dataset_hash"].as_str().unwrap().len() == 16);

    // Training artifacts.
    assert!(dir.join("history-m1n2off.csv").exists());
    assert!(dir.join("irsnet-m1n2off.json").exists());
    let history = std::fs::read_to_string(dir.join("history-m1n2off.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,lr\n"));
    assert_eq!(history.lines().count(), 1 + 3);

    // report command re-emits the CSV and verifies the round trip itself.
    let csv2 = dir.join("again.csv");
    let out = run_ok(bin().args([
        "report",
        "--report",
        report_path.to_str().unwrap(),
        "--csv",
        csv2.to_str().unwrap(),
    ]));
    assert!(out.contains("round trip verified"));
    assert_eq!(
        std::fs::read(dir.join("report.csv")).unwrap(),
        std::fs::read(&csv2).unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_sweep_emits_one_row_per_method_and_point() {
    let dir = tmp("sweep");
    let config = dir.join("exp.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
  "seed": 3,
  "out_dir": "{}",
  "points": [
    {{"antennas": 1, "elements": 2}},
    {{"antennas": 1, "elements": 3}},
    {{"antennas": 1, "elements": 4}}
  ],
  "data": {{"train": 10, "validation": 10, "test": 25}},
  "methods": ["ga5", "random"]
}}"#,
            dir.display()
        ),
    )
    .unwrap();
    run_ok(bin().args(["bench", "--config", config.to_str().unwrap()]));
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 6, "one row per (method, point):\n{csv}");
    for n in [2, 3, 4] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("1,{n},"))).count(), 2);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_then_infer_roundtrip() {
    let dir = tmp("train");
    let train = gen_data(&dir, "train.iwds", 1, 2, "off", 400, 1);
    let val = gen_data(&dir, "val.iwds", 1, 2, "off", 80, 2);
    let test = gen_data(&dir, "test.iwds", 1, 2, "off", 50, 3);
    let ckpt = dir.join("net.json");
    let hist = dir.join("hist.csv");
    run_ok(bin().args([
        "train",
        "--train-data",
        train.to_str().unwrap(),
        "--val-data",
        val.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        ckpt.to_str().unwrap(),
        "--history",
        hist.to_str().unwrap(),
        "--batch-size",
        "80",
        "--max-epochs",
        "3",
    ]));
    assert!(ckpt.exists());
    assert!(hist.exists());
    let out = run_ok(bin().args([
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
    ]));
    assert!(out.contains("irsnet: samples 50 mean_throughput"), "{out}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_flags_exit_with_usage_error() {
    let out = bin().args(["gen-data", "--m", "2"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert!(!out.status.success());
}
