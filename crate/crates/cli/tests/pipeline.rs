use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SYNTHETIC: &str = r#"{
  "model": { "kind": "synthetic", "n": 30, "m": 10, "seed": 4 },
  "lowrank": { "rank": 10 },
  "seed": 2
}"#;

fn aopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aopt")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the config and builds a bundle from it.
fn built(dir: &TempDir, config: &str) -> PathBuf {
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, config).unwrap();
    let bundle = dir.path().join("bundle");
    ok(aopt(&["build", "--config", s(&cfg), "--out-dir", s(&bundle)]));
    bundle
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_then_verify_is_global() {
    let dir = TempDir::new().unwrap();
    let bundle = built(&dir, SYNTHETIC);
    let out = dir.path().join("out");
    ok(aopt(&["solve", "--bundle", s(&bundle), "--m0", "3", "--tol", "1e-8", "--out-dir", s(&out)]));
    let design = out.join("wstar_m0_3.csv");
    ok(aopt(&["verify", "--bundle", s(&bundle), "--design", s(&design), "--m0", "3", "--out-dir", s(&out)]));
    let v = json(&out.join("verify.json"));
    assert_eq!(v["report"]["is_global"], Value::Bool(true));
    assert!(v["report"]["fw_gap"].as_f64().unwrap() <= 1e-8);

    let rec = json(&out.join("solve_m0_3.json"));
    let hash = rec["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(rec["seeds"]["build"], 2);
    let grad = fs::read_to_string(out.join("gradient_m0_3.csv")).unwrap();
    assert!(grad.lines().skip(1).all(|l| l.ends_with(&format!("{hash},2"))));
    let g: Vec<f64> = grad.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(g.windows(2).all(|p| p[0] <= p[1]), "gradient table is sorted ascending");
}

#[test]
fn continuation_reaches_an_enumerated_design() {
    let dir = TempDir::new().unwrap();
    let bundle = built(&dir, SYNTHETIC);
    let out = dir.path().join("out");
    ok(aopt(&["continue", "--bundle", s(&bundle), "--m0", "3", "--out-dir", s(&out)]));
    ok(aopt(&["oracle", "--bundle", s(&bundle), "--m0", "3", "--out-dir", s(&out)]));
    let rec = json(&out.join("continue_m0_3.json"));
    let r = &rec["results"][0];
    let w: Vec<f64> = r["w_binary"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), 3);
    assert!(w.iter().all(|&v| v == 0.0 || v == 1.0));
    let side = json(&out.join("enumeration_m0_3.json"));
    assert_eq!(side["count"], 120);
    let best = side["best"]["objective"].as_f64().unwrap();
    let j_bin = r["j_binary"].as_f64().unwrap();
    let j_star = r["j_star"].as_f64().unwrap();
    assert!(j_star <= best * (1.0 + 1e-9), "relaxation bounds every binary design");
    assert!(j_bin >= best * (1.0 - 1e-9));
    let table = fs::read_to_string(out.join("enumeration_m0_3.csv")).unwrap();
    assert_eq!(table.lines().count(), 121);
}

#[test]
fn baseline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let bundle = built(&dir, SYNTHETIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(aopt(&["baseline", "--bundle", s(&bundle), "--m0", "4", "--count", "200", "--seed", "11", "--out-dir", s(out)]));
    }
    for f in ["baseline_m0_4.csv", "baseline_m0_4.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    ok(aopt(&[
        "--sequential", "baseline", "--bundle", s(&bundle), "--m0", "4", "--count", "200", "--seed", "11", "--out-dir",
        s(&b),
    ]));
    assert_eq!(fs::read(a.join("baseline_m0_4.csv")).unwrap(), fs::read(b.join("baseline_m0_4.csv")).unwrap());
}

#[test]
fn rebuilding_reproduces_the_factors() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (b1, b2) = (built(&d1, SYNTHETIC), built(&d2, SYNTHETIC));
    for f in ["R.csv", "Q.csv", "chat.csv"] {
        assert_eq!(fs::read(b1.join(f)).unwrap(), fs::read(b2.join(f)).unwrap(), "{f}");
    }
    let (h1, h2) = (json(&b1.join("bundle.json")), json(&b2.join("bundle.json")));
    assert_eq!(h1["r_sha256"], h2["r_sha256"]);
    assert_eq!(h1["config_hash"], h2["config_hash"]);

    let b3 = d2.path().join("reseeded");
    let cfg = d2.path().join("config.json");
    ok(aopt(&["build", "--config", s(&cfg), "--out-dir", s(&b3), "--seed", "99"]));
    assert_ne!(json(&b3.join("bundle.json"))["config_hash"], h1["config_hash"]);
}

#[test]
fn tampered_bundle_is_rejected() {
    let dir = TempDir::new().unwrap();
    let bundle = built(&dir, SYNTHETIC);
    let r = fs::read_to_string(bundle.join("R.csv")).unwrap();
    fs::write(bundle.join("R.csv"), r.replacen('1', "2", 1)).unwrap();
    let out = aopt(&["solve", "--bundle", s(&bundle), "--m0", "2", "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_input_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let o = dir.path().join("o");

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"model": {"kind": "synthetic", "n": 5, "m": 3}, "sover": {}}"#).unwrap();
    let out = aopt(&["build", "--config", s(&cfg), "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sover"));

    fs::write(&cfg, r#"{"model": {"kind": "synthetic", "n": 5, "m": 3}, "noise": {"fraction": 0}}"#).unwrap();
    let out = aopt(&["build", "--config", s(&cfg), "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise.fraction"));

    let missing = dir.path().join("nowhere");
    let out = aopt(&["solve", "--bundle", s(&missing), "--m0", "2", "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(2));

    let bundle = built(&dir, SYNTHETIC);
    let design = dir.path().join("design.csv");
    fs::write(&design, "sensor,weight\n0,1\n1,1\n2,1\n").unwrap();
    let out = aopt(&["verify", "--bundle", s(&bundle), "--design", s(&design), "--m0", "2", "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));

    fs::write(&design, "sensor,weight\n0,1.5\n").unwrap();
    let out = aopt(&["verify", "--bundle", s(&bundle), "--design", s(&design), "--m0", "2", "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(2));

    let out = aopt(&["sweep", "--bundle", s(&bundle), "--m0", "3-1", "--out-dir", s(&o)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_budget() {
    let dir = TempDir::new().unwrap();
    let bundle = built(&dir, SYNTHETIC);
    let out = dir.path().join("sweep");
    ok(aopt(&["sweep", "--bundle", s(&bundle), "--m0", "1-6", "--count", "100", "--seed", "5", "--out-dir", s(&out)]));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let m0s: Vec<usize> = table.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(m0s, (1..=6).collect::<Vec<_>>());
    let rec = json(&out.join("sweep_record.json"));
    assert_eq!(rec["results"].as_array().unwrap().len(), 6);
    assert_eq!(rec["seeds"]["baseline"], 5);
    assert!(rec["model"]["r_sha256"].as_str().unwrap().len() == 64);
    for r in rec["results"].as_array().unwrap() {
        assert!(r["j_star"].as_f64().unwrap() <= r["j_binary"].as_f64().unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn variance_field_sums_to_the_objective() {
    let dir = TempDir::new().unwrap();
    let bundle = built(&dir, SYNTHETIC);
    let out = dir.path().join("o");
    ok(aopt(&["continue", "--bundle", s(&bundle), "--m0", "2", "--out-dir", s(&out)]));
    ok(aopt(&["variance", "--bundle", s(&bundle), "--design", s(&out.join("design_m0_2.csv")), "--out-dir", s(&out)]));
    let side = json(&out.join("variance.json"));
    assert!(side["relative_difference"].as_f64().unwrap() < 1e-10);
    let rows = fs::read_to_string(out.join("variance.csv")).unwrap();
    assert_eq!(rows.lines().count(), 31);
}
