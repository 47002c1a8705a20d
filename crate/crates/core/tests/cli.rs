use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const CUBIC_JUMP: &str = r#"{"breakpoints": [0.0], "pieces": [[1, -1, 0, -1], [-1, -1, 0, -1]]}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_irrsde"))
}

fn write_config(dir: &TempDir, name: &str, doc: &Value) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, serde_json::to_string(doc).unwrap()).unwrap();
    path
}

fn cubic_jump_config(extra: Value) -> Value {
    let mut doc = json!({
        "drift": serde_json::from_str::<Value>(CUBIC_JUMP).unwrap(),
        "diffusion": {"pieces": [[1.0]]},
        "x0": 0.5,
        "T": 1.0,
    });
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    doc
}

fn run(cmd: &str, config: &Path, args: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn simulate_writes_one_row_per_grid_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({"base_steps": 4})));
    let out = dir.path().join("path.csv");
    let o = run("simulate", &cfg, &["--level", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("t,x\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.5);
    assert_eq!(rows[4][0].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn simulate_with_transform_is_identity_without_breakpoints() {
    let dir = TempDir::new().unwrap();
    let doc = json!({
        "drift": {"pieces": [[0, 0, 0, -1]]},
        "diffusion": {"pieces": [[0.7]]},
        "x0": 1.2,
        "T": 1.0,
    });
    let cfg = write_config(&dir, "c.json", &doc);
    let o = run("simulate", &cfg, &["--level", "5", "--with-transform"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("t,x,z,g_of_x\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 33);
    for r in rows {
        assert_eq!(r[1], r[2]);
        assert_eq!(r[1], r[3]);
    }
}

#[test]
fn simulate_json_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({})));
    let o = run("simulate", &cfg, &["--level", "3", "--format", "json", "--with-transform"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["x"].as_array().unwrap().len(), 9);
    assert_eq!(v["z"].as_array().unwrap().len(), 9);
    assert_eq!(v["overflowed"], json!(false));
    assert_eq!(v["delta"], json!(0.125));
}

#[test]
fn missing_horizon_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut doc = cubic_jump_config(json!({}));
    doc.as_object_mut().unwrap().remove("T");
    let cfg = write_config(&dir, "c.json", &doc);
    let o = run("simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn unreadable_config_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = run("simulate", &dir.path().join("absent.json"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({})));
    let out = dir.path().join("no/such/dir/out.csv");
    let o = run("simulate", &cfg, &["--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn converge_rejects_a_close_reference() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({})));
    let o = run("converge", &cfg, &["--levels", "3,4,5", "--ref-level", "7", "--paths", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_selftest_recovers_half() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({})));
    let out = dir.path().join("table.csv");
    let o = run("converge", &cfg, &["--selftest", "--levels", "2,3,4,5,6", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 5);
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("table.csv.meta.json")).unwrap()).unwrap();
    assert!((meta["slope"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((meta["prefactor"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn converge_small_study() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({"levels": [3, 4, 5], "ref_level": 8})));
    let o = run("converge", &cfg, &["--paths", "50", "--seed", "11", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let errors: Vec<f64> = rows.iter().map(|r| r["error"].as_f64().unwrap()).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2]);
    assert_eq!(v["metadata"]["n_paths"], json!(50));
}

#[test]
fn converge_reports_overflow() {
    let dir = TempDir::new().unwrap();
    // the tamed scheme still overflows once |x0| alone exceeds the clamp
    let doc = json!({
        "drift": {"pieces": [[0, -1]]},
        "diffusion": {"pieces": [[1.0]]},
        "x0": 1e151,
        "T": 1.0,
        "levels": [1, 2, 3],
        "ref_level": 6,
        "paths": 2,
    });
    let cfg = write_config(&dir, "c.json", &doc);
    let o = run("converge", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn diagnose_csv_layout() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "c.json",
        &cubic_jump_config(json!({"p": [2.0, 4.0], "eps": [0.1, 0.05], "paths": 40})),
    );
    let o = run("diagnose", &cfg, &["--level", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("quantity,k,parameter,delta,estimate,stderr,n_paths\n"));
    let rows = csv_rows(&text);
    let count = |q: &str| rows.iter().filter(|r| r[0] == q).count();
    assert_eq!(count("moment_sup"), 2);
    assert_eq!(count("increment"), 2);
    assert_eq!(count("occupation"), 2);
    assert_eq!(count("crossing"), 1);
    for r in &rows {
        assert_eq!(r.len(), 7);
        assert_eq!(r[6], "40");
    }
}

#[test]
fn diagnose_crossing_without_breakpoints_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let doc = json!({
        "drift": {"pieces": [[0, -1]]},
        "diffusion": {"pieces": [[1.0]]},
        "x0": 0.0,
        "T": 1.0,
        "crossing": true,
    });
    let cfg = write_config(&dir, "c.json", &doc);
    assert_eq!(run("diagnose", &cfg, &[]).status.code(), Some(2));
}

#[test]
fn check_transform_passes_on_cubic_jump() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({})));
    let o = run("check-transform", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = v.as_object().unwrap();
    assert_eq!(checks.len(), 5);
    assert!(checks.values().all(|c| c["pass"] == json!(true)));
}

#[test]
fn check_transform_rejects_vanishing_diffusion_at_breakpoint() {
    let dir = TempDir::new().unwrap();
    let doc = json!({
        "drift": serde_json::from_str::<Value>(CUBIC_JUMP).unwrap(),
        "diffusion": {"pieces": [[0.0, 1.0]]},
        "x0": 0.5,
        "T": 1.0,
    });
    let cfg = write_config(&dir, "c.json", &doc);
    assert_eq!(run("check-transform", &cfg, &[]).status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &cubic_jump_config(json!({"levels": [3, 4, 5], "ref_level": 8, "paths": 300})));
    let outputs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let o = run("converge", &cfg, &["--threads", t]);
            assert_eq!(o.status.code(), Some(0));
            o.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}
