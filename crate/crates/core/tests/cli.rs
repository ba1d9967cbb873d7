//! Exit codes and outputs of the command-line entry point.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_schfem"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("schfem_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

const TINY: [&str; 10] = [
    "--set",
    "epsilon=1/8",
    "--set",
    "resolution=8",
    "--set",
    "t_end=2e-4",
    "--set",
    "tol=1.5",
    "--set",
    "eig_every=0",
];

#[test]
fn config_errors_exit_with_one() {
    let out = bin().args(["config", "--set", "epsilom=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilom"));
    let out = bin().args(["config", "--set", "epsilon=0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_prints_defaults_and_overrides() {
    let out = bin().args(["config", "--set", "sigma=5"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("sigma = 5"));
    assert!(text.contains("t_end = 0.012"));
}

#[test]
fn mesh_audit_succeeds() {
    let out = bin().arg("mesh-audit").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_then_estimate() {
    let dir = scratch("run");
    let out = bin().arg("run").args(TINY).arg("--out").arg(&dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.join("MANIFEST")).unwrap();
    assert!(manifest.contains("series.csv"));
    assert!(dir.join("config.ini").exists());
    let out = bin().arg("estimate").arg(dir.join("path_0000")).args(TINY).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn ensemble_writes_aggregates() {
    let dir = scratch("ens");
    let out = bin()
        .arg("ensemble")
        .args(TINY)
        .args(["--paths", "2", "--workers", "2", "--seed", "9", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("histogram.csv").exists());
    assert!(dir.join("summary.csv").exists());
    assert!(dir.join("path_0001/series.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_snapshot_directory_is_an_io_error() {
    let out = bin().args(["estimate", "/nonexistent/schfem"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
