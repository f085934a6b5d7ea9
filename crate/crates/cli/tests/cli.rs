use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn letf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_letf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

const GBM: &str = r#"{"model": {"kind": "Gbm", "mu": 0.05, "sigma": 0.2}, "alpha": 0.5, "beta": 1.0, "r": 0.01}"#;

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn growth_prints_rate() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "gbm.json", GBM);
    let out = letf(&["growth", "--config", "gbm.json", "--beta", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][column(&h, "rate")], "0.025");
    assert_eq!(rows[0][column(&h, "classification")], "Finite");
}

#[test]
fn inverse_garch_condition_exits_2() {
    let dir = TempDir::new().unwrap();
    write_config(
        dir.path(),
        "ig.json",
        r#"{"model": {"kind": "InverseGarch", "theta": 0.03, "a": 0.5, "sigma": 0.2}, "alpha": 0.5, "beta": 2, "r": 0.01}"#,
    );
    let out = letf(&["growth", "--config", "ig.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("θ > σ²"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(letf(&["growth"], dir.path()).status.code(), Some(2));
    write_config(dir.path(), "bad.json", r#"{"model": {"kind": "Gbm", "mu": 0.05}, "alpha": 0.5}"#);
    assert_eq!(letf(&["growth", "--config", "bad.json"], dir.path()).status.code(), Some(2));
    write_config(dir.path(), "gbm.json", GBM);
    assert_eq!(letf(&["riccati", "--config", "gbm.json"], dir.path()).status.code(), Some(2));
    assert_eq!(letf(&["figures", "3"], dir.path()).status.code(), Some(2));
    assert_eq!(
        letf(&["growth", "--config", "gbm.json", "--betas", "1:0:1"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn complex_kappa_exits_3() {
    let dir = TempDir::new().unwrap();
    write_config(
        dir.path(),
        "cir.json",
        r#"{"model": {"kind": "ExtendedCir", "theta": 0.02, "mu": 0.2, "sigma": 0.2}, "alpha": 0.5, "beta": 0.5, "r": 0.01}"#,
    );
    assert_eq!(letf(&["growth", "--config", "cir.json"], dir.path()).status.code(), Some(2));
    let out = letf(&["growth", "--config", "cir.json", "--relax"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_gap_exits_4() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "gbm.json", GBM);
    let base = ["verify", "--config", "gbm.json", "--beta", "2", "--paths", "20000", "--steps", "1000"];
    let ok = letf(&base, dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let mut args = base.to_vec();
    args.push("--published");
    let gap = letf(&args, dir.path());
    assert_eq!(gap.status.code(), Some(4));
    assert!(String::from_utf8(gap.stdout).unwrap().contains("growth_rate,0.02,"));
}

fn figure_summary(dir: &Path, id: &str) -> Vec<(f64, f64)> {
    let out = letf(&["figures", id, "--out", "figs"], dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join(format!("figs/figure{id}_summary.csv"))).unwrap();
    let (h, rows) = parse_csv(&text);
    assert_eq!(h, ["mu", "beta_star", "rate_at_star"]);
    rows.iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect()
}

#[test]
fn figure_one_end_to_end() {
    let dir = TempDir::new().unwrap();
    let summary = figure_summary(dir.path(), "1");
    let expected = [(0.05, 1.93), (0.01, 0.0), (-0.05, -1.95)];
    for ((mu, b), (emu, eb)) in summary.iter().zip(expected) {
        assert_eq!(*mu, emu);
        assert!((b - eb).abs() <= 0.01, "μ = {mu}: β* = {b}");
    }
    for mu in ["0.05", "0.01", "-0.05"] {
        let text = fs::read_to_string(dir.path().join(format!("figs/figure1_mu_{mu}.csv"))).unwrap();
        let (h, rows) = parse_csv(&text);
        assert_eq!(h, ["beta", "rate"]);
        assert_eq!(rows.len(), 601);
        assert_eq!(rows[0][0], "-3");
        assert_eq!(rows[300][0], "0");
        assert_eq!(rows[600][0], "3");
    }
    assert!(dir.path().join("figs.manifest.json").exists());
}

#[test]
fn figure_two_end_to_end() {
    let dir = TempDir::new().unwrap();
    let summary = figure_summary(dir.path(), "2");
    let expected = [3.65, 1.52, -1.68];
    for ((_, b), eb) in summary.iter().zip(expected) {
        assert!((b - eb).abs() <= 0.01, "β* = {b}");
    }
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "gbm.json", GBM);
    let first = letf(
        &[
            "verify", "--config", "gbm.json", "--beta", "-1", "--paths", "4000", "--steps", "1000", "--seed", "7", "--out",
            "v.csv",
        ],
        dir.path(),
    );
    assert_eq!(first.status.code(), Some(0));
    let before = fs::read(dir.path().join("v.csv")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "verify");
    assert_eq!(manifest["sim"]["seed"], 7);
    assert_eq!(manifest["problems"][0]["beta"], -1.0);
    let argv: Vec<String> = manifest["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    fs::remove_file(dir.path().join("v.csv")).unwrap();
    let args: Vec<&str> = argv.iter().map(String::as_str).collect();
    assert_eq!(letf(&args, dir.path()).status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("v.csv")).unwrap(), before);

    letf(&["figures", "1", "--out", "a"], dir.path());
    letf(&["figures", "1", "--out", "b"], dir.path());
    for name in ["figure1_summary.csv", "figure1_mu_0.05.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap()
        );
    }
}

#[test]
fn growth_curve_round_trips() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), "gbm.json", GBM);
    let out = letf(&["growth", "--config", "gbm.json", "--betas", "-2:2:0.5", "--out", "curve.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = parse_csv(&fs::read_to_string(dir.path().join("curve.csv")).unwrap());
    assert_eq!(rows.len(), 9);
    let (bcol, rcol) = (column(&h, "beta"), column(&h, "rate"));
    for row in rows {
        let single = letf(&["growth", "--config", "gbm.json", "--beta", &row[bcol]], dir.path());
        let (h2, again) = parse_csv(&String::from_utf8(single.stdout).unwrap());
        assert_eq!(again[0][column(&h2, "rate")], row[rcol]);
    }
}

#[test]
fn riccati_and_eigenpair_agree() {
    let dir = TempDir::new().unwrap();
    write_config(
        dir.path(),
        "quad.json",
        r#"{"model": {"kind": "Quadratic", "d": 2, "b": [0.05, -0.02], "Bmat": [[-1, 0.2], [0, -1.5]], "sigma": [[0.3, 0], [0.1, 0.25]]}, "alpha": 0.5, "beta": 2, "r": 0.01}"#,
    );
    let ric = letf(&["riccati", "--config", "quad.json"], dir.path());
    assert_eq!(ric.status.code(), Some(0));
    let (_, rows) = parse_csv(&String::from_utf8(ric.stdout).unwrap());
    let get = |k: &str| rows.iter().find(|r| r[0] == k).unwrap()[1].clone();
    assert_eq!(get("stable"), "true");
    assert_eq!(get("c_test_exponent"), "true");
    assert_eq!(get("V[0][1]"), get("V[1][0]"));

    let eig = letf(&["eigenpair", "--config", "quad.json"], dir.path());
    let (h, erows) = parse_csv(&String::from_utf8(eig.stdout).unwrap());
    assert_eq!(erows[0][column(&h, "lambda")], get("lambda"));
    assert_eq!(erows[0][column(&h, "family")], "ExpQuadratic");
    let res: f64 = erows[0][column(&h, "max_abs_residual")].parse().unwrap();
    assert!(res <= 1e-9);
}

#[test]
fn optimal_respects_cap() {
    let dir = TempDir::new().unwrap();
    write_config(
        dir.path(),
        "gbm.json",
        r#"{"model": {"kind": "Gbm", "mu": 0.3, "sigma": 0.2}, "alpha": 0.5, "beta": 1.0, "r": 0.01}"#,
    );
    let free = letf(&["optimal", "--config", "gbm.json"], dir.path());
    let (h, rows) = parse_csv(&String::from_utf8(free.stdout).unwrap());
    let b: f64 = rows[0][column(&h, "beta_star")].parse().unwrap();
    assert!((b - 14.5).abs() < 1e-9);
    let capped = letf(&["optimal", "--config", "gbm.json", "--cap", "-3:3"], dir.path());
    let (h, rows) = parse_csv(&String::from_utf8(capped.stdout).unwrap());
    assert_eq!(rows[0][column(&h, "beta_star")], "3");
    assert_eq!(rows[0][column(&h, "method")], "Boundary(+3)");
}
