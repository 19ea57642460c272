//! Command-line runs against temporary config files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_coeffid");

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{body}\n[output]\ndir = \"out\"\n")).unwrap();
    path
}

fn coeffid(args: &[&str], cfg: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("-c")
        .arg(cfg)
        .env_remove("COEFFID_BRIDGE_CMD")
        .output()
        .unwrap()
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap()
}

const SMALL: &str = "[problem]\nexample = \"ex1\"\nn = 16\ndelta = 0.01\n[admm]\nouter_iters = 5\n";

#[test]
fn missing_config_exits_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = coeffid(&["run"], &tmp.path().join("absent.toml"));
    assert_eq!(out.status.code(), Some(1));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn unknown_key_and_bad_value_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[admm]\nbeta = -1.0\n");
    assert_eq!(coeffid(&["run"], &cfg).status.code(), Some(1));
    let cfg = write_config(tmp.path(), "[admm]\nbta = 0.1\n");
    assert_eq!(coeffid(&["run"], &cfg).status.code(), Some(1));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn zero_iterations_write_a_header_only_history() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[problem]\nn = 8\n[admm]\nouter_iters = 0\n");
    let out = coeffid(&["run"], &cfg);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let hist = csv(&tmp.path().join("out/history.csv"));
    assert_eq!(hist.len(), 1);
    assert_eq!(
        hist[0].join(","),
        "iter,rel_error,grad_misfit,newton_steps,pcg_state,pcg_H,wall_ms"
    );
}

#[test]
fn run_writes_consistent_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = coeffid(&["run"], &cfg);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = tmp.path().join("out");
    for f in [
        "history.csv",
        "summary.csv",
        "q_final.grid",
        "timing.csv",
        "observation.txt",
        "noise_floor.csv",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert!(!dir.join("FAILED").exists());
    let hist = csv(&dir.join("history.csv"));
    assert_eq!(hist.len(), 6);
    let sum = |name: &str| -> u64 {
        let c = column(&hist, name);
        hist[1..].iter().map(|r| r[c].parse::<u64>().unwrap()).sum()
    };
    let summary = csv(&dir.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    let get = |name: &str| summary[1][column(&summary, name)].clone();
    assert_eq!(
        get("total_newton").parse::<u64>().unwrap(),
        sum("newton_steps")
    );
    assert_eq!(
        get("total_pcg_state").parse::<u64>().unwrap(),
        sum("pcg_state")
    );
    assert_eq!(get("total_pcg_H").parse::<u64>().unwrap(), sum("pcg_H"));
    let last_err: f64 = hist[5][column(&hist, "rel_error")].parse().unwrap();
    assert_eq!(get("rel_error_50").parse::<f64>().unwrap(), last_err);
    assert!((get("h").parse::<f64>().unwrap() - 1.0 / 16.0).abs() < 1e-15);
}

#[test]
fn check_passes_and_reports_tolerances() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = coeffid(&["check"], &cfg);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(lines.len() >= 5);
    assert!(lines
        .iter()
        .all(|l| l.starts_with("PASS") && l.contains("tol=")));
}

#[test]
fn corrupted_gradient_fails_the_check() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = coeffid(&["check", "--corrupt-gradient"], &cfg);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout)
        .lines()
        .any(|l| l.starts_with("FAIL")));
}

fn sweep_rows(tmp: &TempDir) -> Vec<Vec<String>> {
    let cfg = write_config(
        tmp.path(),
        &format!("{SMALL}[sweep]\nns = [8, 16]\ndeltas = [0.0, 0.02]\nfile = \"grid.csv\"\n"),
    );
    let out = coeffid(&["sweep"], &cfg);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    csv(&tmp.path().join("out/grid.csv"))
}

#[test]
fn sweep_covers_the_grid_and_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ra, rb) = (sweep_rows(&a), sweep_rows(&b));
    assert_eq!(
        ra[0].join(","),
        "n,delta,h,total_newton,total_pcg_state,total_pcg_H,cpu_s,rel_error_50,status"
    );
    assert_eq!(ra.len(), 5);
    let cells: Vec<(String, String)> = ra[1..]
        .iter()
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect();
    assert_eq!(cells.len(), 4);
    for n in ["8", "16"] {
        assert_eq!(cells.iter().filter(|c| c.0 == n).count(), 2);
    }
    let cpu = column(&ra, "cpu_s");
    let strip = |rows: &[Vec<String>]| -> Vec<Vec<String>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(i, _)| *i != cpu)
                    .map(|(_, v)| v.clone())
                    .collect()
            })
            .collect()
    };
    assert_eq!(strip(&ra), strip(&rb));
    assert!(ra[1..].iter().all(|r| r.last().unwrap() == "ok"));
}

#[test]
fn newton_work_is_mesh_independent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[admm]\nouter_iters = 50\n[sweep]\nns = [64, 128]\ndeltas = [0.01]\nfile = \"mesh.csv\"\n",
    );
    let out = coeffid(&["sweep"], &cfg);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv(&tmp.path().join("out/mesh.csv"));
    let c = column(&rows, "total_newton");
    let (coarse, fine): (f64, f64) = (rows[1][c].parse().unwrap(), rows[2][c].parse().unwrap());
    assert!((fine - coarse).abs() / coarse < 0.2, "{coarse} vs {fine}");
}

#[test]
fn denoise_test_uses_the_bridge_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[problem]\nn = 16\n[denoiser]\nkind = \"external\"\nbridge_cmd = \"/nonexistent/denoiser\"\n",
    );
    let script: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "tests",
        "fixtures",
        "fake_bridge.py",
    ]
    .iter()
    .collect();
    let out = Command::new(BIN)
        .args(["denoise-test", "-c"])
        .arg(&cfg)
        .env(
            "COEFFID_BRIDGE_CMD",
            format!("python3 {} --model gaussian", script.display()),
        )
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{text}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let field = |key: &str| -> f64 {
        text.split_whitespace()
            .find_map(|w| w.strip_prefix(&format!("{key}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(field("tv_out") < field("tv_in"));
    assert!(tmp.path().join("out/denoise_out.grid").is_file());

    let bogus = coeffid(&["denoise-test"], &cfg);
    assert_eq!(bogus.status.code(), Some(2));
}
