//! End-to-end tests of the command-line interface: artifact layout, the
//! manifest contract, reproducibility, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pointvortex")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pointvortex-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    let body = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&body).unwrap()
}

#[test]
fn sample_runs_are_byte_identical_with_matching_hashes() {
    let dir_a = tmp_dir("sample-a");
    let dir_b = tmp_dir("sample-b");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "--out-dir",
            dir.to_str().unwrap(),
            "sample",
            "--n",
            "10",
            "--beta",
            "0",
            "--steps",
            "1000",
            "--seed",
            "7",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let chain_a = std::fs::read(dir_a.join("chain.jsonl")).unwrap();
    let chain_b = std::fs::read(dir_b.join("chain.jsonl")).unwrap();
    assert_eq!(
        chain_a, chain_b,
        "chain files differ between identical runs"
    );

    let hash = |m: &serde_json::Value| m["outputs"][0]["sha256"].as_str().unwrap().to_string();
    assert_eq!(hash(&manifest(&dir_a)), hash(&manifest(&dir_b)));
}

#[test]
fn replicates_emit_separate_seeded_chains() {
    let dir = tmp_dir("replicates");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "sample",
        "--n",
        "5",
        "--beta",
        "0",
        "--steps",
        "500",
        "--seed",
        "3",
        "--replicates",
        "2",
    ]);
    assert!(out.status.success());
    let a = std::fs::read(dir.join("chain-r0.jsonl")).unwrap();
    let b = std::fs::read(dir.join("chain-r1.jsonl")).unwrap();
    assert_ne!(a, b, "replicates must differ");
    let m = manifest(&dir);
    assert_eq!(m["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn solve_pde_at_zero_beta_writes_constant_density() {
    let dir = tmp_dir("pde-zero");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "solve-pde",
        "--beta",
        "0",
        "--mesh",
        "64",
    ]);
    assert!(out.status.success());
    let xi = std::fs::read_to_string(dir.join("xi.csv")).unwrap();
    let mut cells = 0usize;
    for row in xi.lines() {
        for cell in row.split(',') {
            let v: f64 = cell.parse().unwrap();
            assert!((v - 1.0).abs() < 1e-12, "xi = {v}, want 1/A = 1");
            cells += 1;
        }
    }
    assert_eq!(cells, 64 * 64);
    for name in ["header.json", "e0.csv", "psi.csv"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tmp_dir("manifest");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "solve-pde",
        "--beta",
        "-0.5",
        "--mesh",
        "16",
    ]);
    assert!(out.status.success());
    let m = manifest(&dir);
    let listed: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            Path::new(o["path"].as_str().unwrap())
                .file_name()
                .unwrap()
                .to_string_lossy()
                .to_string()
        })
        .collect();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().to_string();
        if name == "manifest.json" {
            continue;
        }
        assert!(listed.contains(&name), "{name} missing from the manifest");
    }
    // and the listed files exist with nonzero size
    for o in m["outputs"].as_array().unwrap() {
        let p = PathBuf::from(o["path"].as_str().unwrap());
        assert!(p.exists());
        assert!(o["bytes"].as_u64().unwrap() > 0);
    }
}

#[test]
fn bounds_reports_a_satisfied_bound() {
    let dir = tmp_dir("bounds");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "bounds",
        "--n",
        "2",
        "--m",
        "2",
        "--beta",
        "0.5",
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(report["bound_satisfied"], serde_json::Value::Bool(true));
    assert!(report["f_exact"].as_f64().is_some());
}

#[test]
fn bounds_sweep_emits_csv_rows() {
    let dir = tmp_dir("sweep");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "bounds",
        "--n",
        "2",
        "--m",
        "2",
        "--beta",
        "0.5",
        "--beta-sweep",
        "-0.6:0.6:4",
        "--oracle-resolution",
        "25",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("bounds.csv")).unwrap();
    assert_eq!(
        csv.lines().count(),
        5,
        "header plus one row per beta:\n{csv}"
    );
    assert!(csv.lines().next().unwrap().starts_with("beta,"));
}

#[test]
fn converge_and_decay_write_tables() {
    let dir = tmp_dir("tables");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "converge",
        "--n-list",
        "16,32",
        "--beta",
        "-1",
        "--mesh",
        "32",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(dir.join("converge.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "decay",
        "--n-list",
        "16,32,64",
        "--beta",
        "-1",
    ]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.join("decay.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.contains("true"));
}

#[test]
fn solve_finite_writes_solution_json() {
    let dir = tmp_dir("finite");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "solve-finite",
        "--n",
        "16",
        "--m",
        "4",
        "--beta",
        "-1",
    ]);
    assert!(out.status.success());
    let body: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap();
    let occ = body["solution"]["occupations"].as_array().unwrap();
    assert_eq!(occ.len(), 4);
    let total: f64 = occ.iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 16.0).abs() < 1e-6);
    assert!(body["stationarity_residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn sinh_poisson_writes_fields() {
    let dir = tmp_dir("sinh");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "sinh-poisson",
        "--beta",
        "0",
        "--mesh",
        "16",
    ]);
    assert!(out.status.success());
    for name in ["header.json", "omega.csv", "e0.csv", "psi.csv"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tmp_dir("no-seed");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "sample",
        "--n",
        "4",
        "--beta",
        "0",
        "--steps",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["sample", "--does-not-exist", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_lists_every_offending_parameter() {
    let dir = tmp_dir("validation");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "sample",
        "--n",
        "0",
        "--beta",
        "0",
        "--steps",
        "5",
        "--burn-in",
        "10",
        "--thin",
        "0",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n must be"), "stderr: {err}");
    assert!(err.contains("steps"), "stderr: {err}");
    assert!(err.contains("thin"), "stderr: {err}");
}

#[test]
fn non_convergence_exits_three() {
    let dir = tmp_dir("nonconv");
    // a 3x3 grid is inhomogeneous (center vs corner boxes), so the uniform
    // start needs more than two sweeps
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "solve-finite",
        "--n",
        "16",
        "--m",
        "9",
        "--beta",
        "-1",
        "--max-iter",
        "2",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn admissibility_failure_is_a_validation_error() {
    let dir = tmp_dir("admissibility");
    // beta lambda^2 N = -40 is far below the -4 pi floor
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "sample",
        "--n",
        "10",
        "--beta",
        "-4",
        "--steps",
        "100",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // the global override admits it
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "--beta-min",
        "-100",
        "sample",
        "--n",
        "10",
        "--beta",
        "-4",
        "--steps",
        "100",
        "--seed",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
