//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line (written straight to stdout so it survives capture).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use fastslow_cli::verify::Verifier;
use fastslow_cli::ExperimentConfig;

fn report(line: &str) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn criterion(id: u32) {
    let cfg = ExperimentConfig::default_config();
    let res = match Verifier::new(&cfg).run(id) {
        Ok(r) => r,
        Err(e) => {
            report(&format!("FAIL criterion {id:>2}: error {e:#}"));
            panic!("criterion {id} errored: {e:#}");
        }
    };
    report(&res.line());
    assert!(res.passed(), "{}", res.line());
}

#[test]
fn criterion_01_averaged_slope() {
    criterion(1);
}

#[test]
fn criterion_02_green_kubo() {
    criterion(2);
}

#[test]
fn criterion_03_central_exponent() {
    criterion(3);
}

#[test]
fn criterion_04_skew_negativity() {
    criterion(4);
}

#[test]
fn criterion_05_fluctuations() {
    criterion(5);
}

#[test]
fn criterion_06_metastable_gaussian() {
    criterion(6);
}

#[test]
fn criterion_07_coupling_decay() {
    criterion(7);
}

#[test]
fn criterion_08_stationary_density() {
    criterion(8);
}

#[test]
fn criterion_09_rate_function() {
    criterion(9);
}

#[test]
fn criterion_10_center_field() {
    criterion(10);
}

#[test]
fn criterion_11_foliation() {
    criterion(11);
}

/// Reduced sample sizes so the whole `verify` run takes seconds; the code
/// paths are the same as with the default config.
fn quick_config(dir: &Path) -> PathBuf {
    let text = fastslow_cli::config::DEFAULT_CONFIG
        .replace("lclt_samples = 100000", "lclt_samples = 2000")
        .replace("metastable_samples = 100000", "metastable_samples = 2000")
        .replace("compare_samples = 1000000", "compare_samples = 2000")
        .replace("orbit_steps = 10000000\nratefn", "orbit_steps = 200000\nratefn")
        .replace("repro_samples = 2000", "repro_samples = 500");
    assert_ne!(text, fastslow_cli::config::DEFAULT_CONFIG);
    let path = dir.join("quick.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_verify(config: &Path, out: &Path, workers: usize) -> i32 {
    let run = Command::new(env!("CARGO_BIN_EXE_fastslow"))
        .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--workers", &workers.to_string(), "--seed", "12345", "verify"])
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs");
    run.status.code().expect("exit code")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_12_reproducibility() {
    let root = std::env::temp_dir().join(format!("fastslow-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let cfg = quick_config(&root);
    let runs = [("a", 1), ("b", 1), ("c", 2)];
    for (name, workers) in runs {
        let code = run_verify(&cfg, &root.join(name), workers);
        // 0 = all rows pass, 1 = some rows fail at the reduced sizes; both
        // mean the run completed
        assert!(code == 0 || code == 1, "verify run {name} exited with {code}");
    }
    let a = dir_bytes(&root.join("a"));
    let b = dir_bytes(&root.join("b"));
    let c = dir_bytes(&root.join("c"));
    assert!(a.iter().any(|(n, _)| n == "verify.csv"));
    let same_seed = a == b;
    let same_workers = a == c;
    let cfg = ExperimentConfig::load(&cfg).unwrap();
    let inner = Verifier::new(&cfg).run(12).unwrap();
    let passed = same_seed && same_workers && inner.passed();
    report(&format!(
        "{} criterion 12 [reproducibility]: verify twice byte-identical = {same_seed}; 1 vs 2 workers identical = {same_workers}; {}",
        if passed { "PASS" } else { "FAIL" },
        inner.line()
    ));
    fs::remove_dir_all(&root).unwrap();
    assert!(passed);
}
