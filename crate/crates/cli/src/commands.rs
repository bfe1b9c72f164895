//! The experiment subcommands. Each one reads only the config (plus, where
//! `output.fields_csv` is set, a fields CSV from an earlier `fields` run),
//! writes its artifacts atomically and returns a serialisable report.

use std::fs::File;
use std::io::Write;

use anyhow::{bail, Context, Result};
use fastslow::averaged::{find_zeros, ou_variance, ZeroSet};
use fastslow::ensemble::{
    compare_det_vs_sde, exceedance_stats, fit_metastable, run_deterministic, CompareOptions, CompareReport,
    ExceedanceTable, InitialEnsemble, MetastableFit,
};
use fastslow::foliation::{
    conjugacy, holonomy_probe, integrate_leaf, multiplier_obstruction, write_leaves_csv, CenterLeaf, HolonomyReport,
    MultiplierReport,
};
use fastslow::lyapunov::{a3_check, attach_psi_bar_star, center_field, chi_c_formula, chi_c_orbit, A3Report, CenterField, OrbitOptions};
use fastslow::stochastic::{adjoint_residual, metastable_mixture, rate_function, stationary_density};
use fastslow::systems::{FastSlowSystem, PhasePoint};
use fastslow::transfer::{slow_fields, SlowFields, VAR2_WARN};
use serde::Serialize;

use crate::config::{ExperimentConfig, System};
use crate::output::OutDir;

/// Run `$body` with `$s` bound to the concrete system inside `$sys`.
#[macro_export]
macro_rules! with_system {
    ($sys:expr, $s:ident => $body:expr) => {
        match $sys {
            $crate::config::System::Example($s) => $body,
            $crate::config::System::Skew($s) => $body,
        }
    };
}

/// Fields from `output.fields_csv` when set, otherwise computed.
pub fn load_fields(cfg: &ExperimentConfig, sys: &System) -> Result<SlowFields> {
    if let Some(path) = &cfg.output.fields_csv {
        let f = File::open(path).with_context(|| format!("opening fields {}", path.display()))?;
        return SlowFields::read_csv(f).with_context(|| format!("reading fields {}", path.display()));
    }
    let r = &cfg.resolution;
    Ok(slow_fields(sys.as_dyn(), r.m, r.n_bins, r.gk_terms.terms())?)
}

#[derive(Debug, Serialize)]
pub struct ZeroSummary {
    pub theta: f64,
    pub slope: f64,
    pub kind: String,
    /// `Var^2 / (2 |omega_bar'|)` at stable zeros.
    pub ou_variance: Option<f64>,
}

fn summarize_zeros(fields: &SlowFields, zeros: &ZeroSet) -> Vec<ZeroSummary> {
    zeros
        .zeros
        .iter()
        .map(|z| ZeroSummary {
            theta: z.theta,
            slope: z.slope,
            kind: format!("{:?}", z.kind).to_lowercase(),
            ou_variance: (z.slope < 0.0).then(|| ou_variance(fields, z)),
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct FieldsReport {
    pub system: String,
    pub m: usize,
    pub n_bins: usize,
    pub gk_terms: usize,
    pub derivative_error: f64,
    pub min_var2: f64,
    /// `Var^2` above the threshold everywhere. This is a necessary condition
    /// for (A0), not a certificate of it.
    pub nondegenerate: bool,
    pub zeros: Vec<ZeroSummary>,
    pub rotation: bool,
    pub zero_error: Option<String>,
}

pub fn fields(cfg: &ExperimentConfig, out: &OutDir) -> Result<FieldsReport> {
    let sys = cfg.system.build()?;
    let r = &cfg.resolution;
    let mut f = slow_fields(sys.as_dyn(), r.m, r.n_bins, r.gk_terms.terms())?;
    // psi_bar_* needs an invariant density of the fiber map; skip where the
    // map is not a covering of the expected degree
    match attach_psi_bar_star(sys.as_dyn(), &f, r.n_bins) {
        Ok(g) => f = g,
        Err(e) => log::warn!("psi_bar_* not attached: {e}"),
    }
    out.write_csv("fields.csv", |w| f.write_csv(w))?;
    let (zeros, zero_error) = match find_zeros(&f) {
        Ok(z) => (Some(z), None),
        Err(e) => (None, Some(e.to_string())),
    };
    if !f.nondegenerate() {
        log::warn!("min Var^2 = {:e} is below {VAR2_WARN:e}; (A0) cannot hold", f.min_var2());
    }
    let report = FieldsReport {
        system: sys.as_dyn().describe(),
        m: f.m(),
        n_bins: f.n_bins,
        gk_terms: f.gk_terms,
        derivative_error: f.derivative_error,
        min_var2: f.min_var2(),
        nondegenerate: f.nondegenerate(),
        zeros: zeros.as_ref().map(|z| summarize_zeros(&f, z)).unwrap_or_default(),
        rotation: zeros.as_ref().is_some_and(|z| z.is_rotation()),
        zero_error,
    };
    out.write_json("fields_report.json", &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct StationaryReport {
    pub epsilon: f64,
    pub m: usize,
    pub v_eps: f64,
    pub log_z: f64,
    pub omega_period: f64,
    pub mass: f64,
    pub adjoint_residual: f64,
    pub nondegenerate: bool,
}

pub fn stationary(cfg: &ExperimentConfig, out: &OutDir) -> Result<StationaryReport> {
    let sys = cfg.system.build()?;
    let f = load_fields(cfg, &sys)?;
    let eps = cfg.system.epsilon();
    let d = stationary_density(&f, eps, cfg.resolution.stationary_m)?;
    out.write_csv("stationary.csv", |w| d.write_csv(w))?;
    let report = StationaryReport {
        epsilon: eps,
        m: d.m(),
        v_eps: d.v_eps,
        log_z: d.log_z,
        omega_period: d.omega_period,
        mass: d.mass(),
        adjoint_residual: adjoint_residual(&f, &d),
        nondegenerate: f.nondegenerate(),
    };
    out.write_json("stationary_report.json", &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct CenterSummary {
    pub k_radius: f64,
    pub sigma: f64,
    pub measured_ratio: f64,
    pub residual: f64,
    pub iterations: usize,
    pub depth: usize,
}

impl From<&CenterField> for CenterSummary {
    fn from(cf: &CenterField) -> Self {
        Self {
            k_radius: cf.k_radius,
            sigma: cf.sigma,
            measured_ratio: cf.measured_ratio,
            residual: cf.residual,
            iterations: cf.iterations,
            depth: cf.depth,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LyapunovReport {
    pub epsilon: f64,
    pub chi_c: f64,
    pub chi_c_over_eps: Option<f64>,
    pub stderr: f64,
    pub n_steps: usize,
    pub n_orbits: usize,
    /// `sum_j c_j psi_bar_*(theta_j)` with equal weights over the sinks.
    pub formula: Option<f64>,
    pub a3: Option<A3Report>,
    pub center_field: Option<CenterSummary>,
    pub notes: Vec<String>,
}

pub fn lyapunov(cfg: &ExperimentConfig, out: &OutDir) -> Result<LyapunovReport> {
    let sys = cfg.system.build()?;
    let s = sys.as_dyn();
    let r = &cfg.resolution;
    let mut notes = Vec::new();
    let cf = match center_field(s, r.center_nx, r.center_ntheta, r.center_tol) {
        Ok(cf) => {
            out.write_csv("center_field.csv", |w| cf.write_csv(w))?;
            Some(cf)
        }
        Err(e) => {
            notes.push(format!("center field: {e}"));
            None
        }
    };
    let opts = OrbitOptions {
        n_orbits: cfg.run.n_orbits,
        seed: cfg.run.seed,
        ..Default::default()
    };
    let est = chi_c_orbit(s, cf.as_ref(), PhasePoint::new(0.3, cfg.run.theta0), cfg.run.orbit_steps, &opts)?;

    let f = load_fields(cfg, &sys)?;
    let (formula, a3) = match find_zeros(&f) {
        Ok(z) if !z.is_rotation() => {
            let k = z.stable().count();
            let formula = chi_c_formula(s, &z, &vec![1.0 / k as f64; k], r.n_bins)
                .map_err(|e| notes.push(format!("formula: {e}")))
                .ok();
            let a3 = a3_check(s, &z, r.n_bins).map_err(|e| notes.push(format!("(A3): {e}"))).ok();
            (formula, a3)
        }
        Ok(_) => {
            notes.push("rotation regime: no sinks, formula not defined".into());
            (None, None)
        }
        Err(e) => {
            notes.push(format!("zeros: {e}"));
            (None, None)
        }
    };
    let report = LyapunovReport {
        epsilon: s.epsilon(),
        chi_c: est.chi_c,
        chi_c_over_eps: est.chi_c_over_eps,
        stderr: est.stderr,
        n_steps: est.n_steps,
        n_orbits: est.n_orbits,
        formula,
        a3,
        center_field: cf.as_ref().map(CenterSummary::from),
        notes,
    };
    out.write_json("lyapunov.json", &report)?;
    Ok(report)
}

pub fn compare(cfg: &ExperimentConfig, out: &OutDir) -> Result<CompareReport> {
    let sys = cfg.system.build()?;
    let f = load_fields(cfg, &sys)?;
    let run = &cfg.run;
    let opts = CompareOptions {
        n: run.n_samples,
        seed: run.seed,
        sde_step_fraction: run.sde_step_fraction,
        bin_scale: run.bin_scale,
    };
    let report = with_system!(&sys, s => compare_det_vs_sde(s, &f, run.theta0, run.horizon(), &run.epsilon_ladder, &opts))?;
    write_compare(out, &report)?;
    Ok(report)
}

pub(crate) fn write_compare(out: &OutDir, report: &CompareReport) -> Result<()> {
    out.write_with("compare.csv", |w| {
        writeln!(w, "epsilon,tv,bin_width,n_bins,noise_floor,undersampled,det_mean,sde_mean,det_var,sde_var")?;
        for g in &report.rungs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                g.epsilon,
                g.tv,
                g.bin_width,
                g.n_bins,
                g.noise_floor,
                g.undersampled,
                g.det_mean,
                g.sde_mean,
                g.det_var,
                g.sde_var
            )?;
        }
        Ok(())
    })?;
    out.write_json("compare.json", report)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct MetastableReport {
    pub epsilon: f64,
    pub t: f64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub fit: MetastableFit,
    pub exceedance: ExceedanceTable,
}

pub fn metastable(cfg: &ExperimentConfig, out: &OutDir) -> Result<MetastableReport> {
    let sys = cfg.system.build()?;
    let f = load_fields(cfg, &sys)?;
    let eps = cfg.system.epsilon();
    let zeros = find_zeros(&f)?;
    let mixture = metastable_mixture(&zeros, &f, eps)?;
    let run = &cfg.run;
    let init = InitialEnsemble::new(run.theta0, eps, run.n_samples, run.seed)?;
    let snaps = run_deterministic(sys.as_dyn(), &init, &run.times)?;
    let last = snaps.last().context("no snapshot times")?;
    out.write_csv("endpoints.csv", |w| last.write_csv(w))?;
    let fit = fit_metastable(last, &zeros, &mixture)?;
    let sd = mixture.iter().map(|c| c.var).fold(0.0, f64::max).sqrt();
    let thresholds: Vec<f64> = [0.5, 1.0, 2.0, 3.0, 4.0].iter().map(|k| k * sd).collect();
    let report = MetastableReport {
        epsilon: eps,
        t: last.t,
        n: last.len(),
        mean: last.mean(),
        stderr: last.stderr(),
        fit,
        exceedance: exceedance_stats(last, &thresholds),
    };
    out.write_json("metastable.json", &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct LeafSummary {
    pub n_leaves: usize,
    pub max_closure_gap: f64,
    pub max_length: f64,
    pub length_bound: f64,
}

#[derive(Debug, Serialize)]
pub struct ConjugacySummary {
    pub theta: f64,
    pub depth: usize,
    pub residual: f64,
    pub order_error: f64,
}

#[derive(Debug, Serialize)]
pub struct FoliationReport {
    pub center_field: Option<CenterSummary>,
    pub leaves: Option<LeafSummary>,
    pub conjugacies: Vec<ConjugacySummary>,
    pub multipliers: Option<MultiplierReport>,
    pub holonomy: Option<HolonomyReport>,
    pub notes: Vec<String>,
}

pub fn integrate_leaves<S: FastSlowSystem + ?Sized>(sys: &S, cf: &CenterField, n: usize, steps: usize) -> Result<Vec<CenterLeaf>> {
    (0..n)
        .map(|i| Ok(integrate_leaf(sys, cf, PhasePoint::new((i as f64 + 0.5) / n as f64, 0.0), steps)?))
        .collect()
}

pub fn foliation(cfg: &ExperimentConfig, out: &OutDir) -> Result<FoliationReport> {
    let sys = cfg.system.build()?;
    let s = sys.as_dyn();
    let r = &cfg.resolution;
    let mut notes = Vec::new();
    let mut report = FoliationReport {
        center_field: None,
        leaves: None,
        conjugacies: Vec::new(),
        multipliers: None,
        holonomy: None,
        notes: Vec::new(),
    };
    match center_field(s, r.center_nx, r.center_ntheta, r.center_tol) {
        Ok(cf) => {
            let leaves = integrate_leaves(s, &cf, cfg.run.n_leaves, r.leaf_steps)?;
            out.write_csv("leaves.csv", |w| write_leaves_csv(&leaves, w))?;
            report.leaves = Some(LeafSummary {
                n_leaves: leaves.len(),
                max_closure_gap: leaves.iter().map(|l| l.closure_gap).fold(0.0, f64::max),
                max_length: leaves.iter().map(|l| l.length).fold(0.0, f64::max),
                length_bound: CenterLeaf::length_bound(cf.k_radius),
            });
            match holonomy_probe(s, &cf, 0.0, 0.25, 16, 3, r.leaf_steps) {
                Ok(h) => report.holonomy = Some(h),
                Err(e) => notes.push(format!("holonomy: {e}")),
            }
            report.center_field = Some(CenterSummary::from(&cf));
        }
        Err(e) => notes.push(format!("center field: {e}")),
    }
    if s.fixes_origin() {
        for (k, theta) in cfg.run.multiplier_thetas.iter().enumerate() {
            match conjugacy(s, *theta, r.conjugacy_grid, r.conjugacy_depth, Some(r.conjugacy_tol)) {
                Ok(c) => {
                    out.write_csv(&format!("conjugacy_{k}.csv"), |w| c.write_csv(w))?;
                    report.conjugacies.push(ConjugacySummary {
                        theta: c.theta,
                        depth: c.depth,
                        residual: c.residual,
                        order_error: c.order_error,
                    });
                }
                Err(e) => notes.push(format!("conjugacy at theta = {theta}: {e}")),
            }
        }
        let m = multiplier_obstruction(s, &cfg.run.multiplier_thetas)?;
        out.write_csv("multipliers.csv", |w| m.write_csv(w))?;
        report.multipliers = Some(m);
    } else {
        notes.push("x = 0 is not fixed in every fiber: no conjugacy or multiplier table".into());
    }
    if report.center_field.is_none() && report.multipliers.is_none() {
        bail!("foliation produced nothing: {}", notes.join("; "));
    }
    report.notes = notes;
    out.write_json("foliation.json", &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct RateFnReport {
    pub t: f64,
    pub theta0: f64,
    pub var_t2: f64,
    pub xi: f64,
    pub jacobian_at_zero: f64,
    pub failed: Vec<f64>,
}

pub fn ratefn(cfg: &ExperimentConfig, out: &OutDir) -> Result<RateFnReport> {
    let sys = cfg.system.build()?;
    let f = load_fields(cfg, &sys)?;
    let res = rate_function(&f, cfg.run.theta0, cfg.run.horizon(), &cfg.run.y_grid())?;
    out.write_csv("ratefn.csv", |w| res.write_csv(w))?;
    let report = RateFnReport {
        t: res.t,
        theta0: res.theta0,
        var_t2: res.var_t2,
        xi: res.xi,
        jacobian_at_zero: res.jacobian_at_zero,
        failed: res.y_grid.iter().zip(&res.v).filter(|(_, v)| v.is_none()).map(|(y, _)| *y).collect(),
    };
    out.write_json("ratefn.json", &report)?;
    Ok(report)
}
