use twoscale::harness::{LIMIT_CSV, REPORT_FILE, SWEEP_CSV};
use twoscale::{Error, Harness, ProblemConfig, Stage};

fn config(geometry: &str, dim: usize, cells: usize, extra: &str) -> ProblemConfig {
    let s = format!(
        r#"{{
        "schema_version": 1, "name": "pipeline", "dim": {dim}, "components": 1, "cells": {cells},
        "geometry": {geometry}, "density": 1.0, "nu": 1.0, "lambda": 1.0,
        "domain_length": 1.0, "macro_cells": 16, "epsilons": [0.25, 0.125],
        "forcing": {{"macro": {{"type": "sine"}}, "cell": {{"type": "constant", "value": 1.0}}, "components": [1.0]}}
        {extra}
    }}"#
    );
    ProblemConfig::from_json_str(&s).unwrap()
}

#[test]
fn stages_in_isolation_reuse_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        r#"{"type": "double_porosity", "matrix_value": 1.0, "half_width": 0.25}"#,
        2,
        8,
        r#", "expected": {"kernel_dim": 10}"#,
    );
    let h = Harness::new(cfg, dir.path(), 3).unwrap();
    assert!(matches!(h.compare(), Err(Error::MissingCache { .. })));
    assert!(h.validate().unwrap().iter().all(|r| r.pass));
    assert_eq!(h.kernel().unwrap().summary.dim, 10);
    let (bank, summary) = h.correctors().unwrap();
    assert_eq!(bank.entries.len(), 20);
    assert_eq!(summary.seed, 3);
    let limit = h.homogenize().unwrap();
    assert!(limit.summary.homogenized.is_none());
    assert_eq!(limit.summary.dofs, 15 * 15 * 10);
    let sweep = h.sweep().unwrap();
    assert_eq!(sweep.rows.len(), 2);
    let report = h.compare().unwrap();
    assert!(report.passed, "{:?}", report.verdicts);
    assert!(report
        .verdicts
        .iter()
        .any(|v| v.name == "kernel_dim" && v.pass));
    for file in [SWEEP_CSV, LIMIT_CSV, REPORT_FILE] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let csv = std::fs::read_to_string(dir.path().join(SWEEP_CSV)).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "eps,h_fine,r1,r2,r3,e_u,e_xi,iterations,residual"
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap())
            .unwrap();
    assert_eq!(json["schema_version"], 1);
}

#[test]
fn run_through_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(r#"{"type": "uniform", "value": 2.0}"#, 2, 2, "");
    let report = Harness::new(cfg, dir.path(), 0)
        .unwrap()
        .run_through(Stage::Kernel)
        .unwrap();
    assert!(report.kernel.is_some());
    assert!(report.correctors.is_none() && report.sweep.is_none());
    assert!(report.passed);
    assert!(!dir.path().join(SWEEP_CSV).exists());
}

#[test]
fn uniform_preset_is_trivially_classical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(r#"{"type": "uniform", "value": 2.0}"#, 2, 2, "");
    let h = Harness::new(cfg, dir.path(), 0).unwrap();
    let report = h.run().unwrap();
    assert!(report.passed, "{:?}", report.verdicts);
    let k = report.kernel.unwrap();
    assert_eq!(k.dim, 1);
    assert!(k.key_constant.constant.is_finite());
    let c = report.correctors.unwrap();
    assert_eq!(c.max_iterations, 0);
    let t = report.limit.unwrap().homogenized.unwrap();
    assert!((t[0] - 2.0).abs() < 1e-12 && (t[3] - 2.0).abs() < 1e-12 && t[1].abs() < 1e-12);
}
