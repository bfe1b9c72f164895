use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fastslow::transfer::SlowFields;
use fastslow_cli::commands;
use fastslow_cli::config::{ExperimentConfig, SystemConfig};
use fastslow_cli::output::OutDir;

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fastslow-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small strictly expanding setup that every subcommand can run on.
fn small_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_config();
    cfg.system = SystemConfig::ExampleFamily {
        ell: 3,
        alpha: 0.05,
        beta: 0.05,
        epsilon: 1e-2,
        omega_shift: 0.0,
        covering: false,
    };
    cfg.resolution.n_bins = 512;
    cfg.resolution.m = 64;
    cfg.resolution.center_nx = 64;
    cfg.resolution.center_ntheta = 16;
    cfg.resolution.stationary_m = 256;
    cfg.resolution.leaf_steps = 200;
    cfg.resolution.conjugacy_grid = 32;
    cfg.run.n_samples = 500;
    cfg.run.orbit_steps = 100_000;
    cfg.run.epsilon_ladder = vec![1e-2, 5e-3];
    cfg.run.n_leaves = 5;
    cfg.run.n_y = 5;
    cfg.output.dir = dir.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

fn read_column(path: &Path, name: &str) -> Vec<f64> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let idx = rd.headers().unwrap().iter().position(|h| h == name).unwrap();
    rd.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn every_subcommand_runs_standalone() {
    let dir = scratch("all");
    let cfg = small_config(&dir);
    let out = OutDir::create(&dir).unwrap();
    let f = commands::fields(&cfg, &out).unwrap();
    assert!(f.nondegenerate);
    assert!(!f.rotation);
    let s = commands::stationary(&cfg, &out).unwrap();
    assert!((s.mass - 1.0).abs() < 1e-8);
    let l = commands::lyapunov(&cfg, &out).unwrap();
    assert!(l.center_field.is_some() && l.formula.is_some());
    let c = commands::compare(&cfg, &out).unwrap();
    assert_eq!(c.rungs.len(), 2);
    let m = commands::metastable(&cfg, &out).unwrap();
    assert_eq!(m.n, 500);
    let fo = commands::foliation(&cfg, &out).unwrap();
    assert!(fo.leaves.is_some() && fo.multipliers.is_some());
    let r = commands::ratefn(&cfg, &out).unwrap();
    assert!(r.failed.is_empty());
    for name in [
        "fields.csv",
        "stationary.csv",
        "center_field.csv",
        "compare.csv",
        "endpoints.csv",
        "leaves.csv",
        "multipliers.csv",
        "ratefn.csv",
    ] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    assert!(fs::read_dir(&dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn constant_omega_gives_zero_variance() {
    let dir = scratch("const");
    let mut cfg = small_config(&dir);
    cfg.system = SystemConfig::SkewProduct {
        ell: 2,
        cos_x: 0.0,
        sin_theta: 0.3,
        offset: 1.0,
        epsilon: 1e-3,
    };
    commands::fields(&cfg, &OutDir::create(&dir).unwrap()).unwrap();
    let var2 = read_column(&dir.join("fields.csv"), "var2");
    assert_eq!(var2.len(), 64);
    assert!(var2.iter().all(|v| v.abs() < 1e-12), "{var2:?}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn stationary_from_driftless_fields_has_no_flux() {
    let dir = scratch("flux");
    let fields = SlowFields::from_functions(64, |_| 0.0, |_| 0.0, |t| 0.5 + 0.1 * (TAU * t).cos());
    let path = dir.join("input_fields.csv");
    fields.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let mut cfg = small_config(&dir);
    cfg.output.fields_csv = Some(path);
    let r = commands::stationary(&cfg, &OutDir::create(&dir).unwrap()).unwrap();
    assert_eq!(r.v_eps, 0.0);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identical_config_gives_identical_bytes() {
    let (a, b) = (scratch("rep-a"), scratch("rep-b"));
    for d in [&a, &b] {
        let cfg = small_config(d);
        let out = OutDir::create(d).unwrap();
        commands::compare(&cfg, &out).unwrap();
        commands::metastable(&cfg, &out).unwrap();
    }
    for name in ["compare.csv", "compare.json", "endpoints.csv", "metastable.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let mut cfg = small_config(&a);
    cfg.run.seed += 1;
    commands::metastable(&cfg, &OutDir::create(&a).unwrap()).unwrap();
    assert_ne!(fs::read(a.join("endpoints.csv")).unwrap(), fs::read(b.join("endpoints.csv")).unwrap());
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn binary_rejects_bad_config() {
    let dir = scratch("bad");
    let path = dir.join("bad.toml");
    fs::write(&path, fastslow_cli::config::DEFAULT_CONFIG.replace("[run]", "[run]\nunknown_key = 1")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fastslow"))
        .args(["--config", path.to_str().unwrap(), "fields"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn binary_prints_default_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_fastslow")).arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(ExperimentConfig::from_toml(&text).is_ok());
}

#[test]
fn seed_and_workers_flags_apply() {
    let dir = scratch("flags");
    let cfg = small_config(&dir);
    let cfg_path = dir.join("small.toml");
    fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();
    let run = |sub: &str, workers: &str, seed: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_fastslow"))
            .args(["--config", cfg_path.to_str().unwrap(), "--out", sub, "--workers", workers, "--seed", seed, "metastable"])
            .current_dir(&dir)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(dir.join(sub).join("endpoints.csv")).unwrap()
    };
    let a = run("w1", "1", "5");
    assert_eq!(a, run("w3", "3", "5"));
    assert_ne!(a, run("s6", "1", "6"));
    fs::remove_dir_all(&dir).unwrap();
}
