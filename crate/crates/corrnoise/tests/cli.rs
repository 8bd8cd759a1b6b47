use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use corrnoise::descriptor::MechanismDescriptor;
use corrnoise::strategies::Strategy;
use serde_json::Value;
use tempfile::TempDir;

fn corrnoise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrnoise")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = corrnoise(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).expect("stdout is JSON")
}

fn write_mechanism(dir: &Path, name: &str, strategy: &Strategy) -> PathBuf {
    let path = dir.join(name);
    MechanismDescriptor::from_strategy(strategy, None).write_file(&path).unwrap();
    path
}

fn parse_csv(text: &str) -> Vec<Vec<f64>> {
    text.lines().map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

#[test]
fn optimize_then_evaluate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("blt.json");
    let out_s = out.to_str().unwrap();
    ok(&["optimize", "--strategy", "blt", "--steps", "8", "--loss", "max", "--buffers", "4", "--out", out_s]);
    let desc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(desc["kind"], "blt");
    assert_eq!(desc["metadata"]["converged"], true);
    let objective = desc["metadata"]["objective"].as_f64().unwrap();
    assert!(objective <= 1.73);
    let report = json(&["evaluate", "--mechanism", out_s, "--mu", "1"]);
    assert!((report["normalized_max_loss"].as_f64().unwrap() - objective).abs() <= 1e-9);
    let sens = report["sensitivity"].as_f64().unwrap();
    assert!((report["calibrated_nu"].as_f64().unwrap() - sens).abs() <= 1e-12);
}

#[test]
fn identity_evaluates_to_sqrt_n() {
    let dir = TempDir::new().unwrap();
    let p = write_mechanism(dir.path(), "id.json", &Strategy::identity(8));
    let report = json(&["evaluate", "--mechanism", p.to_str().unwrap(), "--mu", "2", "--adjacency", "replace-one"]);
    assert!((report["normalized_max_loss"].as_f64().unwrap() - 8f64.sqrt()).abs() <= 1e-12);
    assert!((report["calibrated_nu"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
}

#[test]
fn descriptor_survives_cli_roundtrip_bytewise() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("banded.json");
    ok(&[
        "optimize",
        "--strategy",
        "banded-toeplitz",
        "--steps",
        "16",
        "--bands",
        "4",
        "--loss",
        "rms",
        "--schema",
        "minsep:4,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(MechanismDescriptor::from_json(&text).unwrap().to_json().unwrap(), text);
}

#[test]
fn sensitivity_oracle_agrees() {
    let dir = TempDir::new().unwrap();
    let p = write_mechanism(dir.path(), "toep.json", &Strategy::optimal_toeplitz(6));
    let report =
        json(&["sensitivity", "--mechanism", p.to_str().unwrap(), "--schema", "minsep:2,3", "--oracle", "brute"]);
    assert_eq!(report["oracle_agrees"], true);
}

#[test]
fn noise_streams_match_materialized_and_repeat() {
    let dir = TempDir::new().unwrap();
    let p = write_mechanism(dir.path(), "blt.json", &Strategy::blt(32, vec![0.9, 0.6], vec![0.05, 0.8]).unwrap());
    let p = p.to_str().unwrap();
    let args = ["noise", "--mechanism", p, "--dim", "3", "--steps", "32", "--seed", "9", "--nu", "1.5"];
    let streamed = ok(&args);
    assert_eq!(streamed, ok(&args));
    let mut dense_args = args.to_vec();
    dense_args.push("--materialized");
    let (a, b) = (parse_csv(&streamed), parse_csv(&ok(&dense_args)));
    assert_eq!(a.len(), 32);
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    let bin = dir.path().join("noise.bin");
    let mut bin_args = args.to_vec();
    bin_args.extend(["--format", "f64le", "--out", bin.to_str().unwrap()]);
    ok(&bin_args);
    assert_eq!(std::fs::read(&bin).unwrap().len(), 32 * 3 * 8);
}

#[test]
fn table_prints_csv() {
    let out =
        corrnoise(&["table", "--name", "max-error", "--steps", "8,16", "--columns", "identity,toeplitz,streaming-h2"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv, "n,Identity,Toeplitz\n8,2.828,1.718\n16,4.000,1.944\n");
    assert!(String::from_utf8_lossy(&out.stderr).contains("Streaming H2"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let p = write_mechanism(dir.path(), "toep.json", &Strategy::optimal_toeplitz(20));
    let csv = dir.path().join("steps.csv");
    let args = [
        "simulate",
        "--problem",
        "constant2d",
        "--mechanism",
        p.to_str().unwrap(),
        "--mu",
        "1",
        "--eta",
        "0.1",
        "--clip",
        "1",
        "--steps",
        "20",
        "--seeds",
        "5",
        "--per-step-csv",
        csv.to_str().unwrap(),
    ];
    let first = json(&args);
    assert_eq!(first, json(&args));
    assert_eq!(first["summary"]["seeds"], 5);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 21);

    let mut free = args.to_vec();
    free[6] = "inf";
    let noiseless = json(&free);
    assert_eq!(noiseless["summary"]["prefix_rmse"]["mean"].as_f64().unwrap(), 0.0);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.json");
    let out = out.to_str().unwrap();
    let dense_max = corrnoise(&["optimize", "--strategy", "dense", "--steps", "8", "--loss", "max", "--out", out]);
    assert_eq!(dense_max.status.code(), Some(2));
    let missing = corrnoise(&["evaluate", "--mechanism", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.json"), "{\"version\":\"1\"").unwrap();
    let bad = corrnoise(&["evaluate", "--mechanism", dir.path().join("bad.json").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_3_and_still_writes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("dense.json");
    let r = corrnoise(&[
        "optimize",
        "--strategy",
        "dense",
        "--steps",
        "16",
        "--loss",
        "rms",
        "--max-iterations",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3));
    let desc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(desc["metadata"]["converged"], false);
}
