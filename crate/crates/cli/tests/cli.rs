//! End-to-end checks of the batch CLI: pipeline outputs, determinism,
//! machine-readable failures.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lyapmin"))
}

fn write_config(dir: &Path, map_sin: &[f64], out: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "map": { "degree": 2, "sin": map_sin, "cos": [] },
        "epsilon": 0.1,
        "regime": "practical",
        "max_period": 8,
        "grid_n": 4096,
        "sample_count": 2,
        "seed": 11,
        "out_dir": out.display().to_string(),
        "sum_samples": 20,
        "birkhoff_count": 4,
        "birkhoff_steps": 5000
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn run_pipeline_writes_reports_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg = write_config(tmp.path(), &[], &out_a);

    let status = bin().args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success(), "run failed");
    for file in [
        "orbits.csv",
        "subaction.csv",
        "subaction.json",
        "plan.json",
        "verification.json",
        "summary.txt",
    ] {
        assert!(out_a.join(file).exists(), "missing {file}");
    }
    let summary = std::fs::read_to_string(out_a.join("summary.txt")).unwrap();
    assert!(summary.contains("all_pass = true"), "summary: {summary}");
    // alpha = log 2 for the doubling map.
    assert!(summary.contains(&format!("alpha = {}", std::f64::consts::LN_2)));

    // Reports round-trip through their published types.
    let plan: lyapmin::perturbation::PlanRecord = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("plan.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(plan.regime, lyapmin::perturbation::Regime::Practical);
    assert!(!plan.plan_id.is_empty());
    let verification: lyapmin::verifier::NeighborhoodReport = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("verification.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(verification.reports.len(), 3);
    let sub_header: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_a.join("subaction.json")).unwrap(),
    )
    .unwrap();
    for key in ["alpha", "defect", "lip_f", "n"] {
        assert!(sub_header.get(key).is_some(), "subaction.json missing {key}");
    }

    // Second run into a fresh directory: byte-identical reports.
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_b)
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "orbits.csv",
        "subaction.csv",
        "subaction.json",
        "plan.json",
        "verification.json",
        "summary.txt",
    ] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn not_expanding_map_yields_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    // 0.2 sin(2πx) on degree 2: min DT = 2 - 0.4π < 1.
    let cfg = write_config(tmp.path(), &[0.2], &out);
    let output = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(parsed["error"]["kind"], "NotExpanding");
}

#[test]
fn orbits_subcommand_writes_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &[0.05], &out);
    let status = bin()
        .args(["orbits", "--config"])
        .arg(&cfg)
        .args(["--max-period", "6"])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("orbits.csv")).unwrap();
    assert!(csv.starts_with("period,code,points,gap,lyap_avg"));
    // 1 + 1 + 2 + 3 + 6 + 9 primitive orbits up to period 6.
    assert_eq!(csv.lines().count() - 1, 22);
}

#[test]
fn verify_exit_status_reflects_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &[], &out);
    let status = bin().args(["verify", "--config"]).arg(&cfg).status().unwrap();
    assert!(status.success());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("verification.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["all_pass"], serde_json::Value::Bool(true));
}
