use std::path::Path;
use std::process::{Command, Output};

fn wavemod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavemod")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = vec![];
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn wavetrain_stage_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = wavemod(&["--out", path(&out), "wavetrain"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(out.join("profile.csv").exists() && out.join("profile.json").exists());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary-wavetrain.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn invalid_config_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"tolerances": {"kernel": -1e-8}}"#).unwrap();
    let r = wavemod(&["--config", path(&cfg), "wavetrain"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("tolerances.kernel"));
    std::fs::write(&cfg, r#"{"run": {"sim": {"dt": "fast"}}}"#).unwrap();
    let r = wavemod(&["--config", path(&cfg), "wavetrain"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("run.sim.dt"));
    assert_eq!(wavemod(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn compare_without_manifest_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = wavemod(&["--out", path(dir.path()), "compare"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stdout).contains("simulate"));
}

#[test]
fn spectrum_passthrough_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(wavemod(&["--out", out, "spectrum", "--xi-count", "201"]).status.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("stability_report.json")).unwrap()).unwrap();
    assert_eq!(rep["d1_holds"], true);
    assert!(rep["envelope"].as_array().unwrap().len() > 90);
    assert_eq!(wavemod(&["--out", out, "coeffs"]).status.code(), Some(0));
    assert_eq!(wavemod(&["--out", out, "report"]).status.code(), Some(0));
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("| spectrum | 2 spectral certification | PASS |"));
    assert!(md.contains("| coeffs | 3 coefficient cross-validation | PASS |"));
}

#[test]
fn config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = wavemod(&["--seed", "5", "config"]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8(r.stdout).unwrap();
    let cfg = dir.path().join("effective.json");
    std::fs::write(&cfg, &text).unwrap();
    let again = wavemod(&["--config", path(&cfg), "config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["seed"], 5);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.json");
    std::fs::write(
        &cfg,
        r#"{
            "seed": 3,
            "run": {
                "periods": 8,
                "sim": {"t_end": 20.0},
                "perturbation": {"kind": "additive-random", "amplitude": 0.01},
                "fit_window": [2.0, 20.0]
            }
        }"#,
    )
    .unwrap();
    let mut outs = vec![];
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let r = wavemod(&["--config", path(&cfg), "--out", path(&out), "run", "--stage", "wavetrain", "coeffs", "simulate", "compare"]);
        assert!(r.status.code() == Some(0) || r.status.code() == Some(1), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(out.join("trajectory/manifest.json").exists());
        assert!(out.join("hj_comparison.csv").exists());
        outs.push(out);
    }
    let a = csv_files(&outs[0]);
    let b = csv_files(&outs[1]);
    assert!(a.len() > 10);
    assert_eq!(a.len(), b.len());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.strip_prefix(&outs[0]).unwrap(), q.strip_prefix(&outs[1]).unwrap());
        assert!(std::fs::read(p).unwrap() == std::fs::read(q).unwrap(), "{} differs", p.display());
    }
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(outs[0].join("summary-compare.json")).unwrap()).unwrap();
    assert!(s["error"].is_null());
}
