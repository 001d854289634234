use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twoscale"))
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.json"))
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_passes_on_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate"], &shipped("laminate-1d"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("strong_ellipticity"));
}

#[test]
fn nonpositive_lambda_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(shipped("laminate-1d"))
        .unwrap()
        .replace("\"lambda\": 1.0", "\"lambda\": 0.0");
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["run"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
}

#[test]
fn kernel_reports_double_porosity_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel"], &shipped("double-porosity-2d"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["dim"], 10);
    assert_eq!(v["combinatorial_dim"], 10);
}

#[test]
fn missing_cache_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["homogenize"], &shipped("laminate-1d"), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("run the `kernel` stage first"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn stage_flag_selects_a_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--stage", "kernel"], &shipped("laminate-1d"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("kernel_basis.json").exists());
    let o = run(&["--stage", "bogus"], &shipped("laminate-1d"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn homogenize_checkerboard_is_twice_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped("checkerboard-2d");
    for stage in ["kernel", "correctors"] {
        assert!(run(&[stage], &cfg, dir.path()).status.success());
    }
    let o = run(&["homogenize"], &cfg, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let t: Vec<f64> = v["homogenized"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(
        (t[0] - 2.0).abs() < 0.04 && (t[3] - 2.0).abs() < 0.04 && t[1].abs() < 1e-8,
        "{t:?}"
    );
}

#[test]
fn sweep_with_two_epsilons_writes_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(shipped("laminate-1d"))
        .unwrap()
        .replace("[0.25, 0.125, 0.0625, 0.03125]", "[0.25, 0.125]");
    let cfg = dir.path().join("two.json");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    for stage in ["kernel", "correctors", "homogenize", "sweep"] {
        let o = run(&[stage], &cfg, &out);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let o = run(&["compare"], &cfg, &out);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn full_run_exits_zero_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped("laminate-1d");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bin()
            .args(["run", "--threads", "2", "--seed", "5", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stdout(&o));
        assert!(stdout(&o).contains("pass homogenize/homogenized_tensor"));
    }
    for file in ["sweep.csv", "limit_solution.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap()
        );
    }
}

#[test]
fn failing_verdict_gives_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(shipped("laminate-1d"))
        .unwrap()
        .replace("[1.3333333333333333]", "[1.5]")
        .replace("[0.25, 0.125, 0.0625, 0.03125]", "[0.25, 0.125]");
    let cfg = dir.path().join("wrong.json");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["run"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL homogenize/homogenized_tensor"));
}
