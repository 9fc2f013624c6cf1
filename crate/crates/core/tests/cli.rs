use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn liouville(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liouville")).args(args).env("LIOUVILLE_THREADS", "2").output().unwrap()
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

/// Hash of every artifact except the manifest, which carries timestamps.
fn artifact_hash(dir: &Path) -> String {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(fs::read(dir.join(&n)).unwrap());
    }
    hex::encode(h.finalize())
}

#[test]
fn runs_are_deterministic_and_manifests_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let args = [
        "clock-mean", "--gamma", "1.2", "--k", "4", "--n-modes", "4096", "--n-replicates", "8", "--seed", "3",
        "--t", "0.02", "--export-path", "--quantum-dt", "0.001", "--output-dir", out,
    ];
    let a = run_dir(&liouville(&args));
    let b = run_dir(&liouville(&args));
    assert_ne!(a, b);
    for f in ["manifest.json", "results.csv", "summary.json", "path.csv", "clock.csv", "trajectory.csv"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(artifact_hash(&a), artifact_hash(&b));

    let manifest = a.join("manifest.json");
    let c = run_dir(&liouville(&["clock-mean", "--config", manifest.to_str().unwrap()]));
    assert_eq!(artifact_hash(&a), artifact_hash(&c));

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert_eq!(m["threads"], 2);
    assert_eq!(m["config"]["gamma"], 1.2);
    assert!(m["generator"].as_str().unwrap().contains("ChaCha20"));

    let csv = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(csv.starts_with("replicate,clock\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, format!(r#"{{"gamma": 0.5, "d0": [0, 2], "output_dir": "{}"}}"#, tmp.path().display())).unwrap();
    let dir = run_dir(&liouville(&["kpz-table", "--config", cfg.to_str().unwrap(), "--gamma", "1.5"]));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["gamma"], 1.5);
    assert_eq!(s["rows"], 2);
    let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().nth(2).unwrap(), "2.0000000000000000e0,1.0000000000000000e0");
}

#[test]
fn validation_failures_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = liouville(&["clock-mean", "--gamma", "2.5", "--margin", "0.7", "--output-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gamma") && err.contains("margin"), "{err}");
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"gamma": 1, "no_such_key": 3}"#).unwrap();
    let out = liouville(&["kpz-table", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(liouville(&["not-a-command"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_are_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let out = liouville(&[
        "moments", "--epsilon", "0.015625", "--moment-horizon", "2", "--n-replicates", "2", "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    let q = dir.join("quarantine");
    assert!(q.join("error.json").exists() && q.join("manifest.json").exists());
    assert!(!dir.join("results.csv").exists());
}
