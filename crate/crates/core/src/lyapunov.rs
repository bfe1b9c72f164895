//! Center direction of the fast-slow map and the central Lyapunov exponent.
//!
//! The center slope `s` (direction `(s, 1)`) satisfies `s(p) = Xi_p(s(F p))` with
//! `Xi_p(s) = ((1 + eps w_theta) s - f_theta) / (f_x - eps w_x s)`, which is a
//! contraction on an invariant interval `[-K, K]` when the fibers expand.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::averaged::ZeroSet;
use crate::error::{Error, Result};
use crate::numerics::mean_stderr;
use crate::rng::stream;
use crate::systems::{reduce, step, FastSlowSystem, LiftedState, Partials, PhasePoint};
use crate::transfer::{build_ulam, srb_density, SlowFields, SRB_MAX_ITER, SRB_TOL};

pub const MAX_SWEEPS: usize = 10_000;
/// Consecutive non-contracting sweeps tolerated before giving up.
pub const STALL_SWEEPS: usize = 5;
pub const SERIES_TOL: f64 = 1e-8;
pub const SERIES_MAX_TERMS: usize = 200;

/// Coefficients of the Moebius map `Xi_p(s) = (a s + b) / (c + d s)`.
#[derive(Debug, Clone, Copy)]
struct Moebius {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Moebius {
    #[inline]
    fn at(eps: f64, q: &Partials) -> Self {
        Self {
            a: 1.0 + eps * q.wtheta,
            b: -q.ftheta,
            c: q.fx,
            d: -eps * q.wx,
        }
    }

    #[inline]
    fn apply(&self, s: f64) -> f64 {
        (self.a * s + self.b) / (self.c + self.d * s)
    }
}

/// Converged center slope on an `n_x x n_theta` grid, with its contraction
/// certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CenterField {
    pub n_x: usize,
    pub n_theta: usize,
    pub epsilon: f64,
    /// Row-major in theta: `values[j * n_x + i]` at `(i / n_x, j / n_theta)`.
    pub values: Vec<f64>,
    /// Radius of the invariant interval.
    pub k_radius: f64,
    /// `sup |Xi'|` over `[-K, K]` at the grid nodes.
    pub sigma: f64,
    /// Last observed ratio of successive sweep changes.
    pub measured_ratio: f64,
    pub iterations: usize,
    /// Sup-change of one further sweep after convergence.
    pub residual: f64,
    /// Sup-change of each sweep.
    pub history: Vec<f64>,
    /// Pullback depth used by [`CenterField::slope_at`].
    pub depth: usize,
}

impl CenterField {
    /// Bilinear periodic interpolation of the grid.
    pub fn interp(&self, x: f64, theta: f64) -> f64 {
        let u = reduce(x) * self.n_x as f64;
        let v = reduce(theta) * self.n_theta as f64;
        let (i0, j0) = (u.floor() as usize % self.n_x, v.floor() as usize % self.n_theta);
        let (fu, fv) = (u - u.floor(), v - v.floor());
        let (i1, j1) = ((i0 + 1) % self.n_x, (j0 + 1) % self.n_theta);
        let g = |i: usize, j: usize| self.values[j * self.n_x + i];
        (1.0 - fv) * ((1.0 - fu) * g(i0, j0) + fu * g(i1, j0)) + fv * ((1.0 - fu) * g(i0, j1) + fu * g(i1, j1))
    }

    /// Slope at an arbitrary point: the interpolated value at `F^d p` pulled
    /// back through `d` exact applications of `Xi`. The interpolation error is
    /// damped by `sigma^d`.
    pub fn slope_at<S: FastSlowSystem + ?Sized>(&self, sys: &S, p: PhasePoint) -> f64 {
        let eps = sys.epsilon();
        let mut maps = Vec::with_capacity(self.depth);
        let mut q = p;
        for _ in 0..self.depth {
            maps.push(Moebius::at(eps, &sys.partials(q.x, q.theta)));
            q = step(sys, q);
        }
        let mut s = self.interp(q.x, q.theta);
        for m in maps.iter().rev() {
            s = m.apply(s);
        }
        s
    }

    pub fn node(&self, i: usize, j: usize) -> PhasePoint {
        PhasePoint::new(i as f64 / self.n_x as f64, j as f64 / self.n_theta as f64)
    }

    /// CSV of `(x, theta, s_hat)` at the grid nodes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "theta", "s_hat"])?;
        for j in 0..self.n_theta {
            for i in 0..self.n_x {
                let p = self.node(i, j);
                wr.serialize((p.x, p.theta, self.values[j * self.n_x + i]))?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Iterate `s <- Xi(s o F)` from `s = 0` until the sup-change is at most `tol`.
pub fn center_field<S: FastSlowSystem + ?Sized>(sys: &S, n_x: usize, n_theta: usize, tol: f64) -> Result<CenterField> {
    if n_x < 8 || n_theta < 4 {
        return Err(Error::InvalidParameter(format!("center grid {n_x} x {n_theta} is too small")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let eps = sys.epsilon();
    let nodes: Vec<(Moebius, PhasePoint)> = (0..n_x * n_theta)
        .into_par_iter()
        .map(|k| {
            let p = PhasePoint::new((k % n_x) as f64 / n_x as f64, (k / n_x) as f64 / n_theta as f64);
            (Moebius::at(eps, &sys.partials(p.x, p.theta)), step(sys, p))
        })
        .collect();

    // invariant interval: |d| K^2 - (c - |a|) K + |b| <= 0 at every node
    let mut k_lo: f64 = 0.0;
    let mut k_hi = f64::INFINITY;
    for (m, _) in &nodes {
        let gap = m.c - m.a.abs();
        if !(gap > 0.0) {
            return Err(Error::ContractionFailure(format!(
                "fiber derivative {} does not dominate the slow multiplier {}",
                m.c, m.a
            )));
        }
        if m.d == 0.0 {
            k_lo = k_lo.max(m.b.abs() / gap);
            continue;
        }
        let disc = gap * gap - 4.0 * m.d.abs() * m.b.abs();
        if disc < 0.0 {
            return Err(Error::ContractionFailure("no invariant slope interval".into()));
        }
        let r = disc.sqrt();
        k_lo = k_lo.max(2.0 * m.b.abs() / (gap + r));
        k_hi = k_hi.min((gap + r) / (2.0 * m.d.abs()));
    }
    if k_lo > k_hi {
        return Err(Error::ContractionFailure(format!(
            "invariant radii disagree ({k_lo} > {k_hi})"
        )));
    }
    let k_radius = k_lo;
    let sigma = nodes
        .iter()
        .map(|(m, _)| (m.a * m.c - m.b * m.d).abs() / (m.c - m.d.abs() * k_radius).powi(2))
        .fold(0.0, f64::max);
    if !(sigma < 1.0) {
        return Err(Error::ContractionFailure(format!("contraction bound sigma = {sigma} >= 1")));
    }

    let mut cf = CenterField {
        n_x,
        n_theta,
        epsilon: eps,
        values: vec![0.0; n_x * n_theta],
        k_radius,
        sigma,
        measured_ratio: f64::NAN,
        iterations: 0,
        residual: f64::NAN,
        history: Vec::new(),
        depth: 0,
    };
    let sweep = |cf: &CenterField| -> (Vec<f64>, f64) {
        let next: Vec<f64> = nodes.par_iter().map(|(m, q)| m.apply(cf.interp(q.x, q.theta))).collect();
        let change = next
            .iter()
            .zip(&cf.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (next, change)
    };
    let mut stalls = 0;
    loop {
        let (next, change) = sweep(&cf);
        cf.values = next;
        cf.iterations += 1;
        if let Some(prev) = cf.history.last() {
            if *prev > 0.0 {
                cf.measured_ratio = change / prev;
                stalls = if cf.measured_ratio >= 1.0 { stalls + 1 } else { 0 };
            }
        }
        cf.history.push(change);
        if change <= tol {
            break;
        }
        if stalls >= STALL_SWEEPS {
            return Err(Error::ContractionFailure(format!(
                "sweep changes stopped decreasing (ratio {})",
                cf.measured_ratio
            )));
        }
        if cf.iterations >= MAX_SWEEPS {
            return Err(Error::NonConvergence {
                what: "center field",
                iterations: cf.iterations,
                residual: change,
            });
        }
    }
    cf.residual = sweep(&cf).1;
    cf.depth = if sigma > 0.0 {
        ((1e-9f64).ln() / sigma.ln()).ceil().clamp(1.0, 200.0) as usize
    } else {
        1
    };
    Ok(cf)
}

/// `eps = 0` center slope at a point of the frozen fiber `theta`:
/// `s_*(x) = -sum_k f_theta(f^k x) / (f^{k+1})'(x)`, truncated once the
/// remaining terms are below [`SERIES_TOL`]. Returns `(value, terms used)`.
pub fn frozen_slope<S: FastSlowSystem + ?Sized>(sys: &S, x: f64, theta: f64, ftheta_sup: f64) -> (f64, usize) {
    let mut s = 0.0;
    let mut prod = 1.0;
    let mut y = x;
    for k in 0..SERIES_MAX_TERMS {
        let q = sys.partials(y, theta);
        prod *= q.fx;
        s -= q.ftheta / prod;
        if ftheta_sup / prod.abs() < SERIES_TOL {
            return (s, k + 1);
        }
        y = reduce(sys.lift(y, theta));
    }
    (s, SERIES_MAX_TERMS)
}

/// Fiber averages entering the center exponent at a frozen `theta`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FiberCenterStats {
    pub theta: f64,
    /// `mu_theta(d omega / d theta)`.
    pub mean_wtheta: f64,
    /// `mu_theta(d omega / d x * s_*)`.
    pub center_term: f64,
    /// `psi_bar_*(theta)`, the sum of the two.
    pub psi_bar: f64,
    pub max_terms: usize,
}

/// Quadrature points per Ulam bin.
const POINTS_PER_BIN: usize = 4;

/// `psi_bar_*(theta) = mu_theta(w_x s_* + w_theta)` against the Ulam SRB density.
pub fn psi_bar_star_fiber<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, n_bins: usize) -> Result<FiberCenterStats> {
    let op = build_ulam(sys, theta, n_bins)?;
    let rho = srb_density(&op, SRB_TOL, SRB_MAX_ITER)?;
    let ftheta_sup = (0..1024)
        .map(|k| sys.partials(k as f64 / 1024.0, theta).ftheta.abs())
        .fold(0.0, f64::max)
        * 1.1;
    let n = n_bins as f64;
    let per_bin: Vec<(f64, f64, usize)> = (0..n_bins)
        .into_par_iter()
        .map(|i| {
            let mut wt = 0.0;
            let mut ct = 0.0;
            let mut terms = 0;
            for j in 0..POINTS_PER_BIN {
                let x = (i as f64 + (j as f64 + 0.5) / POINTS_PER_BIN as f64) / n;
                let q = sys.partials(x, theta);
                let (s, k) = frozen_slope(sys, x, theta, ftheta_sup);
                wt += q.wtheta;
                ct += q.wx * s;
                terms = terms.max(k);
            }
            let w = rho.values[i] / (n * POINTS_PER_BIN as f64);
            (w * wt, w * ct, terms)
        })
        .collect();
    let mean_wtheta: f64 = per_bin.iter().map(|v| v.0).sum();
    let center_term: f64 = per_bin.iter().map(|v| v.1).sum();
    let max_terms = per_bin.iter().map(|v| v.2).max().unwrap_or(0);
    if max_terms >= SERIES_MAX_TERMS {
        log::warn!("center series did not decay below {SERIES_TOL:e} at theta = {theta}");
    }
    Ok(FiberCenterStats {
        theta,
        mean_wtheta,
        center_term,
        psi_bar: mean_wtheta + center_term,
        max_terms,
    })
}

/// `psi_bar_*` on the theta grid of `fields`, attached to a copy of them.
pub fn attach_psi_bar_star<S: FastSlowSystem + ?Sized>(sys: &S, fields: &SlowFields, n_bins: usize) -> Result<SlowFields> {
    let values: Vec<f64> = fields
        .theta
        .iter()
        .map(|t| psi_bar_star_fiber(sys, *t, n_bins).map(|s| s.psi_bar))
        .collect::<Result<_>>()?;
    Ok(fields.clone().with_psi_bar_star(&values))
}

/// `psi_* = w_x s_hat + w_theta` at the center-field nodes, same layout.
pub fn psi_star_field<S: FastSlowSystem + ?Sized>(sys: &S, cf: &CenterField) -> Vec<f64> {
    (0..cf.n_x * cf.n_theta)
        .into_par_iter()
        .map(|k| {
            let p = cf.node(k % cf.n_x, k / cf.n_x);
            let q = sys.partials(p.x, p.theta);
            q.wx * cf.values[k] + q.wtheta
        })
        .collect()
}

/// The mostly-contracting criterion: `psi_bar_*` negative at every sink.
#[derive(Debug, Clone, Serialize)]
pub struct A3Report {
    pub sinks: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub max_psi_bar: f64,
    pub mostly_contracting: bool,
}

pub fn a3_check<S: FastSlowSystem + ?Sized>(sys: &S, zeros: &ZeroSet, n_bins: usize) -> Result<A3Report> {
    let sinks: Vec<f64> = zeros.stable().map(|z| z.theta).collect();
    if sinks.is_empty() {
        return Err(Error::NoStableZero);
    }
    let psi_bar: Vec<f64> = sinks
        .iter()
        .map(|t| psi_bar_star_fiber(sys, *t, n_bins).map(|s| s.psi_bar))
        .collect::<Result<_>>()?;
    let max_psi_bar = psi_bar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(A3Report {
        sinks,
        psi_bar,
        max_psi_bar,
        mostly_contracting: max_psi_bar < 0.0,
    })
}

/// Averaged prediction of `eps^-1 chi_c`: `sum_j c_j psi_bar_*(theta_j)` over
/// the stable zeros, in the order of `zeros.stable()`.
pub fn chi_c_formula<S: FastSlowSystem + ?Sized>(sys: &S, zeros: &ZeroSet, weights: &[f64], n_bins: usize) -> Result<f64> {
    let sinks: Vec<f64> = zeros.stable().map(|z| z.theta).collect();
    if sinks.is_empty() {
        return Err(Error::NoStableZero);
    }
    if weights.len() != sinks.len() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} stable zeros",
            weights.len(),
            sinks.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("weights must be non-negative and sum to 1".into()));
    }
    let mut total = 0.0;
    for (t, c) in sinks.iter().zip(weights) {
        if *c > 0.0 {
            total += c * psi_bar_star_fiber(sys, *t, n_bins)?.psi_bar;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct OrbitOptions {
    pub n_orbits: usize,
    pub seed: u64,
    /// Steps per batch; also the batch-means block for the stderr.
    pub block: usize,
    /// Extra forward steps used to seed the backward slope recursion.
    pub lookahead: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            n_orbits: 1,
            seed: 0,
            block: 100_000,
            lookahead: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovEstimate {
    pub chi_c: f64,
    /// `chi_c / eps`; absent at `eps = 0`.
    pub chi_c_over_eps: Option<f64>,
    /// Batch-means standard error of `chi_c`.
    pub stderr: f64,
    pub n_steps: usize,
    pub n_orbits: usize,
    pub orbit_means: Vec<f64>,
}

pub const MIN_ORBIT_STEPS: usize = 100_000;

/// Birkhoff average of `log |1 + eps (w_x s_hat + w_theta)|` along dithered
/// orbits from `p0`. The slope along the orbit comes from the backward
/// recursion `s_k = Xi_{p_k}(s_{k+1})` over each block plus a lookahead
/// window, seeded from `cf` when given and from 0 otherwise.
pub fn chi_c_orbit<S: FastSlowSystem + ?Sized>(
    sys: &S,
    cf: Option<&CenterField>,
    p0: PhasePoint,
    n_steps: usize,
    opts: &OrbitOptions,
) -> Result<LyapunovEstimate> {
    if n_steps < MIN_ORBIT_STEPS {
        return Err(Error::InvalidParameter(format!(
            "orbit estimate needs at least {MIN_ORBIT_STEPS} steps, got {n_steps}"
        )));
    }
    if opts.n_orbits == 0 || opts.block == 0 {
        return Err(Error::InvalidParameter("n_orbits and block must be positive".into()));
    }
    let eps = sys.epsilon();
    let blocks: Vec<Vec<f64>> = (0..opts.n_orbits)
        .into_par_iter()
        .map(|o| orbit_blocks(sys, cf, p0, n_steps, opts, o as u64))
        .collect();
    let orbit_means: Vec<f64> = blocks
        .iter()
        .map(|b| b.iter().sum::<f64>() / n_steps as f64)
        .collect();
    let chi_c = orbit_means.iter().sum::<f64>() / orbit_means.len() as f64;
    // batch means over full blocks of every orbit
    let full: Vec<f64> = blocks
        .iter()
        .flat_map(|b| {
            let n_full = n_steps / opts.block;
            b[..n_full].iter().map(|s| s / opts.block as f64).collect::<Vec<_>>()
        })
        .collect();
    let (_, stderr) = mean_stderr(&full);
    Ok(LyapunovEstimate {
        chi_c,
        chi_c_over_eps: (eps > 0.0).then(|| chi_c / eps),
        stderr,
        n_steps,
        n_orbits: opts.n_orbits,
        orbit_means,
    })
}

/// Per-block sums of the log multipliers along one orbit.
fn orbit_blocks<S: FastSlowSystem + ?Sized>(
    sys: &S,
    cf: Option<&CenterField>,
    p0: PhasePoint,
    n_steps: usize,
    opts: &OrbitOptions,
    index: u64,
) -> Vec<f64> {
    let eps = sys.epsilon();
    let mut rng = stream(opts.seed, index);
    let mut state = LiftedState::new(p0.x, p0.theta);
    let window = opts.block + opts.lookahead;
    let mut pts: Vec<PhasePoint> = Vec::with_capacity(window);
    let mut parts = vec![Partials { fx: 0.0, ftheta: 0.0, wx: 0.0, wtheta: 0.0 }; window];
    let mut slopes = vec![0.0; window];
    let mut sums = Vec::with_capacity(n_steps / opts.block + 1);
    let mut done = 0;
    while done < n_steps {
        while pts.len() < window {
            pts.push(state.point());
            state.advance_dithered(sys, &mut rng);
        }
        let last = pts[window - 1];
        let mut s = cf.map_or(0.0, |c| c.interp(last.x, last.theta));
        for k in (0..window).rev() {
            parts[k] = sys.partials(pts[k].x, pts[k].theta);
            s = Moebius::at(eps, &parts[k]).apply(s);
            slopes[k] = s;
        }
        let take = opts.block.min(n_steps - done);
        let sum: f64 = (0..take)
            .map(|k| log_abs_1p(eps * (parts[k].wx * slopes[k] + parts[k].wtheta)))
            .sum();
        sums.push(sum);
        done += take;
        pts.drain(..opts.block);
    }
    sums
}

/// `log |1 + z|`, accurate for small `z`.
#[inline]
fn log_abs_1p(z: f64) -> f64 {
    if z > -1.0 {
        z.ln_1p()
    } else {
        (1.0 + z).abs().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{ExampleFamily, SkewProduct};

    #[test]
    fn skew_field_is_zero() {
        let sys = SkewProduct::new(2, 1.0, -1.0, 0.0, 1e-3).unwrap();
        let cf = center_field(&sys, 64, 16, 1e-12).unwrap();
        assert!(cf.values.iter().all(|v| *v == 0.0));
        assert_eq!(cf.k_radius, 0.0);
    }

    #[test]
    fn linear_twist_slope() {
        // at eps = 0 the grid field pulled back agrees with the frozen-fiber series
        let sys = ExampleFamily::new(3, 0.05, 0.05, 0.0).unwrap();
        let cf = center_field(&sys, 128, 32, 1e-12).unwrap();
        assert!(cf.sigma < 1.0);
        assert!(cf.values.iter().all(|v| v.abs() <= cf.k_radius + 1e-12));
        for x in [0.1, 0.37, 0.8] {
            let (s, _) = frozen_slope(&sys, x, 0.2, 1.0);
            assert!((cf.slope_at(&sys, PhasePoint::new(x, 0.2)) - s).abs() < 1e-9);
        }
    }

    #[test]
    fn expanding_failure_is_reported() {
        let sys = ExampleFamily::covering(2, 0.05, 0.1, 1e-3).unwrap();
        assert!(matches!(center_field(&sys, 64, 32, 1e-10), Err(Error::ContractionFailure(_))));
    }
}
