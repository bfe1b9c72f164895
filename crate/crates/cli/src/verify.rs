//! Acceptance checks. Each criterion fixes its own system and thresholds;
//! the config only sets seeds, sample sizes and run lengths.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::sync::OnceLock;

use anyhow::{Context, Result};
use fastslow::averaged::{find_zeros, solve_averaged, variance_curve};
use fastslow::ensemble::{compare_det_vs_sde, deviation_samples, run_deterministic, CompareOptions, InitialEnsemble};
use fastslow::foliation::{multiplier_obstruction, CenterLeaf};
use fastslow::lyapunov::{center_field, chi_c_formula, chi_c_orbit, frozen_slope, OrbitOptions};
use fastslow::numerics::{ks_statistic, normal_cdf, wrap_half};
use fastslow::rng::{derive_seed, stream};
use fastslow::stochastic::{adjoint_residual, em_paths, rate_function, stationary_density, SdeSpec};
use fastslow::systems::{ExampleFamily, PhasePoint, SkewProduct};
use fastslow::transfer::{averaged_drift, green_kubo_var2, slow_fields, GkTerms, SlowFields};
use rand::Rng;
use serde::Serialize;

use crate::commands::integrate_leaves;
use crate::config::ExperimentConfig;
use crate::output::OutDir;

pub const CRITERIA: [u32; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];

const ALPHA: f64 = 0.05;
const BETA: f64 = 0.1;
const EPS: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub label: String,
    pub value: f64,
    /// Human-readable acceptance condition on `value`.
    pub condition: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
}

impl CriterionResult {
    fn new(id: u32, title: &str) -> Self {
        Self {
            id,
            title: title.to_string(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, label: &str, value: f64, condition: String, passed: bool) {
        self.checks.push(Check {
            label: label.to_string(),
            value,
            condition,
            passed,
        });
    }

    fn at_most(&mut self, label: &str, value: f64, bound: f64) {
        self.check(label, value, format!("<= {bound}"), value <= bound);
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// One status line, `PASS` or `FAIL` first.
    pub fn line(&self) -> String {
        let parts: Vec<String> = self
            .checks
            .iter()
            .map(|c| format!("{} = {:.6e} ({}{})", c.label, c.value, c.condition, if c.passed { "" } else { ", failed" }))
            .collect();
        format!(
            "{} criterion {:>2} [{}]: {}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            parts.join("; ")
        )
    }
}

/// Runs the criteria and shares the acceptance fields between them.
pub struct Verifier<'a> {
    cfg: &'a ExperimentConfig,
    fields: OnceLock<SlowFields>,
}

fn acceptance_system(eps: f64) -> ExampleFamily {
    ExampleFamily::covering(2, ALPHA, BETA, eps).expect("acceptance parameters are valid")
}

/// Strictly expanding member used where an invariant cone is needed.
fn expanding_system(eps: f64) -> ExampleFamily {
    ExampleFamily::new(3, 0.05, 0.05, eps).expect("l = 3 member is expanding")
}

impl<'a> Verifier<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            fields: OnceLock::new(),
        }
    }

    fn seed(&self, id: u32) -> u64 {
        derive_seed(self.cfg.run.seed, id as u64)
    }

    /// Slow fields of the acceptance family at n_bins = 4096, m = 256.
    fn fields(&self) -> Result<&SlowFields> {
        if let Some(f) = self.fields.get() {
            return Ok(f);
        }
        let f = slow_fields(&acceptance_system(EPS), 256, 4096, GkTerms::Auto)?;
        Ok(self.fields.get_or_init(|| f))
    }

    pub fn run(&self, id: u32) -> Result<CriterionResult> {
        match id {
            1 => self.averaged_slope(),
            2 => self.green_kubo(),
            3 => self.central_exponent(),
            4 => self.skew_negativity(),
            5 => self.lclt(),
            6 => self.metastable_gaussian(),
            7 => self.coupling(),
            8 => self.stationary(),
            9 => self.rate_function(),
            10 => self.center_field(),
            11 => self.foliation(),
            12 => self.reproducibility(),
            _ => anyhow::bail!("no acceptance criterion {id}"),
        }
    }

    fn averaged_slope(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(1, "averaged slope at the sink");
        let h = 1.0 / 256.0;
        for beta in [0.05, 0.1, 0.2] {
            let sys = ExampleFamily::covering(2, ALPHA, beta, EPS)?;
            let d = (averaged_drift(&sys, h, 4096)? - averaged_drift(&sys, -h, 4096)?) / (2.0 * h);
            let exact = -2.0 * PI * PI * beta;
            r.at_most(&format!("rel err beta={beta}"), ((d - exact) / exact).abs(), 0.02);
        }
        Ok(r)
    }

    fn green_kubo(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(2, "Green-Kubo constant");
        // at theta = 0 the fiber map is 2x and cos 2 pi x is orthogonal to
        // all its compositions, so Var^2(0) = E[cos^2] = 1/2
        let gk = green_kubo_var2(&acceptance_system(EPS), 0.0, 4096, GkTerms::Auto)?;
        r.at_most("|Var^2(0) - 1/2|", (gk.var2 - 0.5).abs(), 0.01);
        Ok(r)
    }

    fn central_exponent(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(3, "positive central exponent");
        let sys = acceptance_system(EPS);
        let opts = OrbitOptions {
            seed: self.seed(3),
            ..Default::default()
        };
        let est = chi_c_orbit(&sys, None, PhasePoint::new(0.3, 0.0), self.cfg.verify.orbit_steps, &opts)?;
        let orbit = est.chi_c / EPS;
        let target = 2.0 * PI * PI * ALPHA;
        r.check(
            "orbit chi_c/eps",
            orbit,
            format!("within 0.2 of {target:.4}"),
            (orbit - target).abs() <= 0.2,
        );
        let zeros = find_zeros(self.fields()?)?;
        let k = zeros.stable().count();
        let formula = chi_c_formula(&sys, &zeros, &vec![1.0 / k as f64; k], 4096)?;
        let tol = (3.0 * est.stderr / EPS).max(0.1);
        r.at_most("|formula - orbit|", (formula - orbit).abs(), tol);
        Ok(r)
    }

    fn skew_negativity(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(4, "skew-product negativity");
        let sys = SkewProduct::new(2, 1.0, -1.0, 0.0, EPS)?;
        let opts = OrbitOptions {
            seed: self.seed(4),
            ..Default::default()
        };
        let est = chi_c_orbit(&sys, None, PhasePoint::new(0.3, 0.0), self.cfg.verify.orbit_steps, &opts)?;
        r.check("chi_c", est.chi_c, "< 0".into(), est.chi_c < 0.0);
        let rel = (est.chi_c / EPS + TAU).abs() / TAU;
        r.at_most("rel err vs -2 pi", rel, 0.1);
        Ok(r)
    }

    fn lclt(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(5, "fluctuations at eps = 1e-4");
        let v = &self.cfg.verify;
        let f = self.fields()?;
        let sys = acceptance_system(v.lclt_epsilon);
        let init = InitialEnsemble::new(v.lclt_theta0, v.lclt_epsilon, v.lclt_samples, self.seed(5))?;
        let s = run_deterministic(&sys, &init, &[1.0])?.pop().context("no snapshot")?;
        let sol = solve_averaged(f, v.lclt_theta0, 1.0, self.cfg.resolution.ode_step)?;
        let sd = variance_curve(f, &sol).final_value().sqrt();
        let d = deviation_samples(&s, &sol, &f.interp());
        r.at_most("KS", ks_statistic(&d.values, |x| normal_cdf(x / sd)), 0.02);
        Ok(r)
    }

    fn metastable_gaussian(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(6, "metastable Gaussian");
        let v = &self.cfg.verify;
        let init = InitialEnsemble::new(v.metastable_theta0, EPS, v.metastable_samples, self.seed(6))?;
        let s = run_deterministic(&acceptance_system(EPS), &init, &[10.0])?.pop().context("no snapshot")?;
        let sd = (EPS / (8.0 * PI * PI * BETA)).sqrt();
        let w: Vec<f64> = s.values.iter().map(|x| wrap_half(*x)).collect();
        r.at_most("KS", ks_statistic(&w, |x| normal_cdf(x / sd)), 0.05);
        Ok(r)
    }

    fn coupling(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(7, "deterministic vs diffusion TV decay");
        let v = &self.cfg.verify;
        let opts = CompareOptions {
            n: v.compare_samples,
            seed: self.seed(7),
            sde_step_fraction: v.compare_step_fraction,
            bin_scale: self.cfg.run.bin_scale,
        };
        let rep = compare_det_vs_sde(
            &acceptance_system(EPS),
            self.fields()?,
            v.compare_theta0,
            1.0,
            &[1e-2, 2.5e-3, 6.25e-4],
            &opts,
        )?;
        for g in &rep.rungs {
            r.check(
                &format!("TV eps={}", g.epsilon),
                g.tv,
                format!("noise floor {:.4}", g.noise_floor),
                true,
            );
        }
        r.check(
            "strictly decreasing",
            rep.strictly_decreasing as u8 as f64,
            "= 1".into(),
            rep.strictly_decreasing,
        );
        r.at_most("max ratio", rep.max_ratio, 0.8);
        Ok(r)
    }

    fn stationary(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(8, "stationary density");
        let drift = |t: f64| 1.0 + 0.5 * (TAU * t).sin();
        let rotation = SlowFields::from_functions(256, drift, |t| 0.5 * TAU * (TAU * t).cos(), |t| 0.5 + 0.2 * (TAU * t).cos());
        let sink = SlowFields::from_functions(256, |t| -(TAU * t).sin() / TAU, |t| -(TAU * t).cos(), |_| 0.5);
        for (name, f) in [("rotation", &rotation), ("sink", &sink)] {
            let d = stationary_density(f, 1e-2, 4096)?;
            r.at_most(&format!("{name} |mass - 1|"), (d.mass() - 1.0).abs(), 1e-8);
            r.at_most(&format!("{name} adjoint residual"), adjoint_residual(f, &d), 1e-3);
        }
        let sup = |eps: f64| -> Result<f64> {
            let d = stationary_density(&rotation, eps, 4096)?;
            let inv: Vec<f64> = d.theta.iter().map(|t| 1.0 / drift(*t)).collect();
            let z = inv.len() as f64 / inv.iter().sum::<f64>();
            Ok(d.rho.iter().zip(&inv).map(|(p, i)| (p - z * i).abs()).fold(0.0, f64::max))
        };
        let (a, b) = (sup(1e-2)?, sup(1e-3)?);
        r.check("sup gap eps=1e-2", a, "reference".into(), true);
        r.check("sup gap eps=1e-3", b, format!("< {a:.6e}"), b < a);
        Ok(r)
    }

    fn rate_function(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(9, "rate function");
        let ys = [-0.1, -0.075, -0.05, -0.025, -0.01, 0.01, 0.025, 0.05, 0.075, 0.1];
        // the acceptance fields are degenerate on theta ~ 0.61-0.89, which
        // paths ending at y ~ -0.1 reach, so the expanding member is used
        let f = slow_fields(&expanding_system(EPS), 256, 4096, GkTerms::Auto)?;
        let res = rate_function(&f, self.cfg.verify.ratefn_theta0, 1.0, &ys)?;
        let mut worst: f64 = 0.0;
        let mut failed = 0;
        for (y, v) in ys.iter().zip(&res.v) {
            match v {
                Some(v) => {
                    let q = y * y / res.var_t2;
                    worst = worst.max(((v - q) / q).abs());
                }
                None => failed += 1,
            }
        }
        r.check("shooting failures", failed as f64, "= 0".into(), failed == 0);
        r.at_most("max rel err vs y^2/Var_t^2", worst, 0.05);
        r.at_most("Jacobian rel err vs xi", (res.jacobian_at_zero / res.xi - 1.0).abs(), 1e-4);
        Ok(r)
    }

    fn center_field(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(10, "center field");
        let res = &self.cfg.resolution;
        let cf = center_field(&expanding_system(EPS), res.center_nx, res.center_ntheta, res.center_tol)?;
        r.check("sigma", cf.sigma, "< 1".into(), cf.sigma < 1.0);
        r.at_most("fixed-point residual", cf.residual, 1e-8);
        let frozen = expanding_system(0.0);
        let cf0 = center_field(&frozen, res.center_nx, res.center_ntheta, res.center_tol)?;
        let ftheta_sup = TAU * (0.05 + 0.05);
        let mut rng = stream(self.seed(10), 0);
        let err = (0..100)
            .map(|_| {
                let p = PhasePoint::new(rng.random(), rng.random());
                let (s, _) = frozen_slope(&frozen, p.x, p.theta, ftheta_sup);
                (cf0.slope_at(&frozen, p) - s).abs()
            })
            .fold(0.0, f64::max);
        r.at_most("eps=0 max gap to series", err, 1e-6);
        Ok(r)
    }

    fn foliation(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(11, "foliation geometry");
        let res = &self.cfg.resolution;
        let sys = expanding_system(EPS);
        let cf = center_field(&sys, res.center_nx, res.center_ntheta, res.center_tol)?;
        let leaves = integrate_leaves(&sys, &cf, 50, res.leaf_steps)?;
        let gap = leaves.iter().map(|l| l.closure_gap).fold(0.0, f64::max);
        let len = leaves.iter().map(|l| l.length).fold(0.0, f64::max);
        r.at_most("max closure gap", gap, 1e-6);
        r.at_most("max leaf length", len, CenterLeaf::length_bound(cf.k_radius));
        let m = multiplier_obstruction(&acceptance_system(EPS), &[0.0, 0.25])?;
        let need = TAU * (ALPHA + 2.0 * BETA) - 1e-6;
        r.check("multiplier spread", m.spread, format!(">= {need:.6}"), m.spread >= need);
        Ok(r)
    }

    /// Reduced pipeline run three times, twice on one worker and once on
    /// `repro_workers`; every artifact must match byte for byte.
    fn reproducibility(&self) -> Result<CriterionResult> {
        let mut r = CriterionResult::new(12, "reproducibility");
        let v = &self.cfg.verify;
        let a = self.repro_bytes(1)?;
        let b = self.repro_bytes(1)?;
        let c = self.repro_bytes(v.repro_workers)?;
        r.check("repeat run identical", (a == b) as u8 as f64, "= 1".into(), a == b);
        r.check(
            &format!("1 vs {} workers identical", v.repro_workers),
            (a == c) as u8 as f64,
            "= 1".into(),
            a == c,
        );
        Ok(r)
    }

    fn repro_bytes(&self, workers: usize) -> Result<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        pool.install(|| -> Result<Vec<u8>> {
            let n = self.cfg.verify.repro_samples;
            let seed = self.seed(12);
            let sys = acceptance_system(1e-2);
            let fields = slow_fields(&sys, 64, 512, GkTerms::Fixed(20))?;
            let mut buf = Vec::new();
            fields.write_csv(&mut buf)?;
            let init = InitialEnsemble::new(0.25, 1e-2, n, seed)?;
            for s in run_deterministic(&sys, &init, &[0.5, 1.0])? {
                s.write_csv(&mut buf)?;
            }
            em_paths(&SdeSpec::new(&fields, 1e-2, seed)?, 0.25, 1.0, n)?.write_csv(&mut buf)?;
            let opts = CompareOptions {
                n,
                seed,
                ..Default::default()
            };
            let rep = compare_det_vs_sde(&sys, &fields, 0.25, 1.0, &[1e-2, 5e-3], &opts)?;
            serde_json::to_writer(&mut buf, &rep)?;
            let est = chi_c_orbit(&sys, None, PhasePoint::new(0.3, 0.0), 100_000, &OrbitOptions { n_orbits: 4, seed, ..Default::default() })?;
            serde_json::to_writer(&mut buf, &est)?;
            Ok(buf)
        })
    }
}

#[derive(Debug, Serialize)]
pub struct VerifySummary {
    pub seed: u64,
    pub all_passed: bool,
    pub criteria: Vec<CriterionResult>,
}

/// Run the selected criteria (all when `only` is empty) and write
/// `verify.csv` and `verify.json`.
pub fn verify(cfg: &ExperimentConfig, out: &OutDir, only: &[u32]) -> Result<VerifySummary> {
    let verifier = Verifier::new(cfg);
    let ids: Vec<u32> = if only.is_empty() { CRITERIA.to_vec() } else { only.to_vec() };
    let mut criteria = Vec::new();
    for id in ids {
        let res = verifier.run(id).unwrap_or_else(|e| {
            let mut r = CriterionResult::new(id, "error");
            r.check(&format!("error: {e:#}"), f64::NAN, "runs to completion".into(), false);
            r
        });
        log::info!("{}", res.line());
        criteria.push(res);
    }
    let summary = VerifySummary {
        seed: cfg.run.seed,
        all_passed: criteria.iter().all(|c| c.passed()),
        criteria,
    };
    out.write_with("verify.csv", |w| {
        writeln!(w, "criterion,title,check,value,condition,passed")?;
        for c in &summary.criteria {
            for k in &c.checks {
                writeln!(w, "{},\"{}\",\"{}\",{},\"{}\",{}", c.id, c.title, k.label, k.value, k.condition, k.passed)?;
            }
        }
        Ok(())
    })?;
    out.write_json("verify.json", &summary)?;
    Ok(summary)
}
