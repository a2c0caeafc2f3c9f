use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use privfl::config::{Backend, DataConfig, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_privfl"))
}

fn write_config(dir: &Path, backend: Backend) -> PathBuf {
    let mut c = ExperimentConfig::synthetic_benchmark();
    c.backend = backend;
    c.data = DataConfig::Synthetic {
        n_samples: 300,
        n_classes: 5,
        n_features: 4,
        separation: 3.0,
    };
    c.federation.clients = 4;
    c.federation.rounds = 3;
    c.model.hidden = vec![3];
    c.training.epochs = 1;
    c.attack.l_tar = 2;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn dry_run_prints_config_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Plaintext);
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
        "--dry-run",
    ]);
    assert!(o.status.success());
    let printed: ExperimentConfig = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed.seed, 4);
    assert!(!out.exists());
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Plaintext);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["federation"].as_object_mut().unwrap().remove("rounds");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rounds"));
}

#[test]
fn invalid_value_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Plaintext);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["defense"]["k"] = 1.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("defense.k"));
}

#[test]
fn run_writes_one_row_per_round_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Encrypted);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--control-fedavg",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = data_rows(&a.join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("0,"));
    assert_eq!(data_rows(&a.join("fedavg_metrics.csv")).len(), 4);
    assert_eq!(data_rows(&a.join("timings.csv")).len(), 4);
    for f in ["metrics.csv", "fedavg_metrics.csv", "rounds.jsonl", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let rounds = std::fs::read_to_string(a.join("rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 4);
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Plaintext);
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "malicious_fraction",
        "--values",
        "0,0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("malicious_fraction_0").join("metrics.csv").exists());
    assert!(out.join("malicious_fraction_0.25").join("metrics.csv").exists());
    assert_eq!(data_rows(&out.join("comparison.csv")).len(), 2);
}

#[test]
fn sweep_without_values_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Plaintext);
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "alpha",
        "--values",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_reports_every_operation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Backend::Encrypted);
    let out = dir.path().join("bench");
    let o = run(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--repetitions",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["bit_length"], 256);
    let rows = data_rows(&out.join("bench.csv"));
    // encrypt, two weight and two bias layers, aggregate, two decryptions
    assert_eq!(rows.len(), 8);
}
