use std::path::Path;
use std::process::Command;

use nlflow::flow::parse_diagnostics_csv;
use nlflow::grid::HeightField;
use serde_json::Value;

fn run(mode: &str, config: &str, dir: &Path) -> (i32, Value) {
    let conf = dir.join("run.conf");
    std::fs::write(&conf, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nlflow"))
        .args([mode, "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(dir.join("out"))
        .env("NLFLOW_THREADS", "2")
        .output()
        .unwrap();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap(), report)
}

const HALFSPACE_FLOW: &str = "n_cols = 16\nn_levels = 32\nR = 0.5\nkind = kernel\ns = 0.5\ninitial = constant\nvalue = 0.125\nh = 0.02\nT = 0.1\n";

#[test]
fn halfspace_flow_keeps_its_perimeter() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run("flow", HALFSPACE_FLOW, dir.path());
    assert_eq!(code, 0, "{report}");
    assert_eq!(report["status"], "ok");
    let csv = std::fs::read_to_string(dir.path().join("out/diagnostics.csv")).unwrap();
    let rows = parse_diagnostics_csv(&csv).unwrap();
    assert!(rows.len() >= 2);
    for r in &rows {
        assert!((r.perimeter - rows[0].perimeter).abs() <= 1e-9 * rows[0].perimeter.abs().max(1.0));
    }
    let mut snaps: Vec<_> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("snapshot_"))
        .collect();
    snaps.sort();
    assert!(!snaps.is_empty());
    for s in snaps {
        let text = std::fs::read_to_string(&s).unwrap();
        let f: HeightField<f64> = HeightField::from_text(&text).unwrap();
        assert!(f.values().iter().all(|&v| (v - 0.125).abs() < 1e-12));
        assert_eq!(f.to_text(), text);
    }
}

#[test]
fn oracle_agrees_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let conf = "n_cols = 4\nn_levels = 6\nR = 0.75\nkind = kernel\ns = 0.5\ninitial = constant\nh = 0.05\noracle_instances = 10\nseed = 3\n";
    let (code, report) = run("oracle", conf, dir.path());
    assert_eq!(code, 0, "{report}");
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn skewed_psi_table_fails_evenness() {
    let dir = tempfile::tempdir().unwrap();
    let table = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/skew_psi.txt")).unwrap();
    std::fs::write(dir.path().join("skew_psi.txt"), table).unwrap();
    let conf = "n_cols = 16\nn_levels = 32\nR = 1\nkind = kernel\nfamily = fractional_aniso\npsi_table = skew_psi.txt\ns = 0.5\ninitial = constant\n";
    let (code, report) = run("validate", conf, dir.path());
    assert_ne!(code, 0);
    let failed = report["failed_checks"].as_array().unwrap();
    assert!(failed.iter().any(|c| c == "kernel evenness"), "{report}");
}

#[test]
fn out_of_range_order_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = HALFSPACE_FLOW.replace("s = 0.5", "s = 1.5");
    let (code, report) = run("flow", &conf, dir.path());
    assert_eq!(code, 2);
    assert_eq!(report["status"], "error");
    assert!(report["problems"].as_array().unwrap().iter().any(|p| p.as_str().unwrap().contains("(0,1)")), "{report}");
}

#[test]
fn identical_runs_write_identical_files() {
    let conf = "n_cols = 16\nn_levels = 32\nR = 0.5\nkind = kernel\ns = 0.5\ninitial = random_lipschitz\namplitude = 0.2\nL = 1\nseed = 11\nh = 0.02\nT = 0.1\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run("flow", conf, a.path()).0, 0);
    assert_eq!(run("flow", conf, b.path()).0, 0);
    let mut names: Vec<_> = std::fs::read_dir(a.path().join("out")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 2);
    for n in names {
        let x = std::fs::read(a.path().join("out").join(&n)).unwrap();
        let y = std::fs::read(b.path().join("out").join(&n)).unwrap();
        assert_eq!(x, y, "{n:?} differs");
    }
}
