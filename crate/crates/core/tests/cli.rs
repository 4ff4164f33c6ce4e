//! End-to-end checks of the `spray` binary: config file plus flag overrides,
//! output files and exit codes.

use std::process::Command;

fn spray() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spray"))
}

#[test]
fn run_writes_csv_summary_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, "# small 2D run\ndim = 2\nn = 16\ndt = 1e-3\nt_final = 0.01\nparticle_count = 2000\n").unwrap();
    let out = dir.path().join("out");
    let status = spray()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--snapshot_stride", "5", "--lemma_stride", "5", "--output_dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&status.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(summary["pass"]["divergence"], true);

    let csv = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 24);
    assert!(header.contains(&"merge_loss"));
    assert_eq!(lines.count(), 11);
    assert!(out.join("summary.json").exists());
    assert!(out.join("config.txt").exists());
    for label in ["000005", "000010"] {
        for kind in ["u", "rho", "particles"] {
            assert!(out.join(format!("{kind}_{label}.bin")).exists(), "{kind}_{label}");
        }
    }
}

#[test]
fn project_test_passes_and_reports_json() {
    let out = spray().args(["project-test", "--dim", "2", "--n", "16", "--fields", "5"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
}

#[test]
fn check_lemmas_passes() {
    let out = spray().args(["check-lemmas", "--cases", "100", "--blowup_cases", "10"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn invalid_values_exit_with_code_two() {
    let out = spray().args(["run", "--n", "12"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = spray().args(["run", "--config", "/nonexistent/file.cfg"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
