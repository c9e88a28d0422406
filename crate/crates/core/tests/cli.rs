use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn skrock(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skrock"))
        .args(args)
        .env("SKROCK_OUTPUT", out_root)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, value: serde_json::Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    p
}

fn laplace_config(budget: u64) -> serde_json::Value {
    json!({
        "experiment": "laplace1d",
        "name": "lap",
        "seed": 7,
        "scale": { "gradient_budget": budget, "n_chains": 2 },
        "samplers": [
            { "kernel": "myula" },
            { "kernel": "skrock", "stages": 15 }
        ]
    })
}

fn sample(dir: &Path, cfg: serde_json::Value) -> PathBuf {
    let p = write_config(dir, cfg);
    let out = skrock(&["sample", p.to_str().unwrap()], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("lap").join("manifest.json")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn sample_then_analyze_writes_speedup_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample(dir.path(), laplace_config(30_000));
    let out = skrock(&["analyze", manifest.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read(&dir.path().join("lap/lap_speedup.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("kl_divergence") && lines[0].ends_with("speedup_slow,speedup_fast"));
    assert!(lines[1].starts_with("myula,1,"));
    assert!(lines[2].starts_with("skrock,15,"));
    // the reference row has no speed-up of its own
    assert!(lines[1].ends_with(",-,-"));
}

#[test]
fn analyze_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample(dir.path(), laplace_config(6_000));
    let table = dir.path().join("lap/lap_speedup.csv");
    assert!(skrock(&["analyze", manifest.to_str().unwrap()], dir.path()).status.success());
    let first = read(&table);
    assert!(skrock(&["analyze", manifest.to_str().unwrap()], dir.path()).status.success());
    assert_eq!(read(&table), first);
}

#[test]
fn identical_runs_give_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    sample(a.path(), laplace_config(3_000));
    sample(b.path(), laplace_config(3_000));
    let mut names: Vec<String> = std::fs::read_dir(a.path().join("lap"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.ends_with(".samples.bin")));
    for n in names.iter().filter(|n| n.as_str() != "timing.json") {
        let (x, y) = (std::fs::read(a.path().join("lap").join(n)).unwrap(), std::fs::read(b.path().join("lap").join(n)).unwrap());
        assert!(x == y, "{n} differs");
    }
}

#[test]
fn zero_budget_runs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = sample(dir.path(), laplace_config(0));
    let m: serde_json::Value = serde_json::from_str(&read(&manifest)).unwrap();
    let traces = m["blocks"][0]["traces"].as_array().unwrap();
    assert_eq!(traces[0]["n_stored"], 0);
}

#[test]
fn oversized_step_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = laplace_config(1_000);
    cfg["samplers"][0]["delta"] = json!(1.0);
    let p = write_config(dir.path(), cfg);
    let out = skrock(&["sample", p.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("samplers[0].delta"));
    assert!(!dir.path().join("lap/manifest.json").exists());
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = laplace_config(1_000);
    cfg["scale"]["gradient_bugdet"] = json!(10);
    let p = write_config(dir.path(), cfg);
    assert_eq!(skrock(&["sample", p.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

fn w2_config(kappas: &[f64], eps_sq: &[f64]) -> serde_json::Value {
    json!({
        "experiment": "w2curves",
        "name": "w2",
        "w2": { "dimension": 10, "kappas": kappas, "epsilons_sq": eps_sq }
    })
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path).lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn w2curves_fits_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), w2_config(&[1e2, 1e3], &[0.1, 10.0]));
    let out = skrock(&["w2curves", p.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let em = csv_rows(&dir.path().join("w2/w2_myula.budget.csv"));
    assert_eq!(em.len(), 4);
    // epsilon^2 above one is met before the first step
    for r in em.iter().filter(|r| r[1] == "10.0") {
        assert_eq!(r[4], "0");
    }
    let slopes = csv_rows(&dir.path().join("w2/w2.slopes.csv"));
    let em_slope: f64 = slopes.iter().find(|r| r[0] == "0.1" && r[1] == "myula").unwrap()[2].parse().unwrap();
    assert!(em_slope > 0.5 && em_slope < 1.5, "{em_slope}");
}

#[test]
fn w2curves_single_kappa_has_no_slope() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), w2_config(&[1e2], &[0.1]));
    assert!(skrock(&["w2curves", p.to_str().unwrap()], dir.path()).status.success());
    assert!(dir.path().join("w2/w2_skrock.budget.csv").exists());
    assert!(!dir.path().join("w2/w2.slopes.csv").exists());
}

#[test]
fn stability_extent_near_stage_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = skrock(&["stability", "--resolution", "801"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text: Vec<PathBuf> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .flat_map(|p| if p.is_dir() { std::fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).collect() } else { vec![p] })
        .filter(|p| p.file_name().unwrap() == "stability_extent.csv")
        .collect();
    assert_eq!(text.len(), 1);
    let rows = csv_rows(&text[0]);
    let sk = rows.iter().find(|r| r[0].starts_with("skrock")).unwrap();
    let extent: f64 = sk.last().unwrap().parse().unwrap();
    // |R1| = 1 where omega0 + omega1 p = -1; hyperbolic forms of T_s and T_s'
    let (s, eta) = (10.0f64, 0.05);
    let w0 = 1.0 + eta / (s * s);
    let th = w0.acosh();
    let w1 = (s * th).cosh() * th.sinh() / (s * (s * th).sinh());
    let edge = -(1.0 + w0) / w1;
    let spacing = 205.0 / 800.0;
    assert!(extent >= edge && extent - edge <= spacing, "{extent} vs {edge}");
}
