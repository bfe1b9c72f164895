//! Ulam discretisation of the frozen fiber maps `f_theta`, their SRB
//! densities, and the slow fields `omega_bar`, `Var^2` built from them.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::PeriodicSpline;
use crate::systems::{reduce, FastSlowSystem};

pub const MAX_BINS: usize = 1 << 22;
pub const SRB_TOL: f64 = 1e-13;
pub const SRB_MAX_ITER: usize = 50_000;

/// Consecutive (mod `n_bins`) non-zero entries of one Ulam row.
#[derive(Debug, Clone, PartialEq)]
pub struct UlamRow {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Row-stochastic Ulam matrix of `f_theta` on `n_bins` equal bins, stored
/// as banded rows.
#[derive(Debug, Clone)]
pub struct UlamOperator {
    pub n_bins: usize,
    pub theta: f64,
    rows: Vec<UlamRow>,
}

impl UlamOperator {
    pub fn row(&self, i: usize) -> &UlamRow {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[UlamRow] {
        &self.rows
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let r = &self.rows[i];
        let off = (j + self.n_bins - r.start) % self.n_bins;
        r.weights.get(off).copied().unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_bins)
            .map(|i| (0..self.n_bins).map(|j| self.entry(i, j)).collect())
            .collect()
    }

    /// `out = v P` (push a mass vector forward one step).
    pub fn push(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n_bins;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (vi, row) in v.iter().zip(&self.rows) {
            if *vi == 0.0 {
                continue;
            }
            let mut j = row.start;
            for w in &row.weights {
                out[j] += vi * w;
                j += 1;
                if j == n {
                    j = 0;
                }
            }
        }
    }

    /// Sum of `|P_ij|` checksum used for golden fixtures.
    pub fn checksum(&self) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * (((r.start + k) % self.n_bins) as f64 + 1.0) * (i as f64 + 1.0))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Exact Ulam matrix: every bin is cut at the preimages of the bin edges
/// under the (monotone) lift of `f_theta`.
pub fn build_ulam<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, n_bins: usize) -> Result<UlamOperator> {
    if n_bins < 16 {
        return Err(Error::InvalidParameter(format!("n_bins = {n_bins} must be at least 16")));
    }
    if n_bins > MAX_BINS {
        return Err(Error::ResourceLimit {
            requested: n_bins,
            max: MAX_BINS,
        });
    }
    let theta = reduce(theta);
    let nf = n_bins as f64;
    let rows: Result<Vec<UlamRow>> = (0..n_bins)
        .into_par_iter()
        .map(|i| {
            let a = i as f64 / nf;
            let b = (i + 1) as f64 / nf;
            for k in 0..=4 {
                let x = a + (b - a) * k as f64 / 4.0;
                if !(sys.dfdx(x, theta) > 0.0) {
                    return Err(Error::BranchResolution { theta, bin: i });
                }
            }
            let fa = sys.lift(a, theta);
            let fb = sys.lift(b, theta);
            if !(fb > fa) {
                return Err(Error::BranchResolution { theta, bin: i });
            }
            let slack = 1e-12 / nf;
            let j_lo = (fa * nf).floor();
            let mut cuts = vec![a];
            let mut edge = j_lo + 1.0;
            while edge / nf < fb - slack {
                let y = edge / nf;
                if y > fa + slack {
                    cuts.push(preimage(sys, theta, y, a, b, fa, fb));
                }
                edge += 1.0;
            }
            cuts.push(b);
            // Skipped near-coincident edges shift the start bin by one.
            let first_edge = j_lo + 1.0;
            let start_bin = if first_edge / nf <= fa + slack { j_lo + 1.0 } else { j_lo };
            let width = b - a;
            let weights: Vec<f64> = cuts.windows(2).map(|w| (w[1] - w[0]) / width).collect();
            let start = (start_bin as i64).rem_euclid(n_bins as i64) as usize;
            Ok(UlamRow { start, weights })
        })
        .collect();
    Ok(UlamOperator {
        n_bins,
        theta,
        rows: rows?,
    })
}

/// Solve `lift(x) = y` on `[a, b]` with a bisection-safeguarded Newton method.
fn preimage<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, y: f64, a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let mut x = a + (y - fa) / (fb - fa) * (b - a);
    for _ in 0..100 {
        let g = sys.lift(x, theta) - y;
        if g == 0.0 {
            return x;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = sys.dfdx(x, theta);
        let mut nx = x - g / d;
        if !(nx > lo && nx < hi) {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() <= 1e-17 || hi - lo <= 4.0 * f64::EPSILON * hi.max(1e-300) {
            return nx;
        }
        x = nx;
    }
    x
}

/// Piecewise-constant invariant density of an Ulam operator.
#[derive(Debug, Clone)]
pub struct SrbDensity {
    pub theta: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl SrbDensity {
    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    /// Bin masses (sum to 1).
    pub fn masses(&self) -> Vec<f64> {
        let n = self.values.len() as f64;
        self.values.iter().map(|v| v / n).collect()
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.values.len() as f64
    }

    /// Midpoint-rule expectation of `g`.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let n = self.values.len() as f64;
        self.values
            .iter()
            .enumerate()
            .map(|(i, h)| h * g((i as f64 + 0.5) / n))
            .sum::<f64>()
            / n
    }

    pub fn l1_distance(&self, other: &SrbDensity) -> Result<f64> {
        // Compare on the coarser grid when the resolutions are nested.
        let (coarse, fine) = if self.n_bins() <= other.n_bins() { (self, other) } else { (other, self) };
        if fine.n_bins() % coarse.n_bins() != 0 {
            return Err(Error::EdgeMismatch);
        }
        let r = fine.n_bins() / coarse.n_bins();
        let n = coarse.n_bins() as f64;
        Ok(coarse
            .values
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let f = fine.values[i * r..(i + 1) * r].iter().sum::<f64>() / r as f64;
                (c - f).abs()
            })
            .sum::<f64>()
            / n)
    }
}

/// Power iteration for the left fixed vector, starting from Lebesgue.
pub fn srb_density(op: &UlamOperator, tol: f64, max_iter: usize) -> Result<SrbDensity> {
    let (masses, iterations, residual) = power_iterate(op, tol, max_iter, |_, _| {})?;
    let n = op.n_bins as f64;
    Ok(SrbDensity {
        theta: op.theta,
        values: masses.iter().map(|m| m * n).collect(),
        iterations,
        residual,
    })
}

/// Power iteration with a per-iteration observer `(iteration, residual)`.
pub fn power_iterate<O: FnMut(usize, f64)>(
    op: &UlamOperator,
    tol: f64,
    max_iter: usize,
    mut observe: O,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = op.n_bins;
    let mut v = vec![1.0 / n as f64; n];
    let mut w = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        op.push(&v, &mut w);
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        residual = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut v, &mut w);
        observe(it, residual);
        if residual <= tol {
            return Ok((v, it, residual));
        }
    }
    Err(Error::NonConvergence {
        what: "SRB power iteration",
        iterations: max_iter,
        residual,
    })
}

pub fn averaged_drift<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, n_bins: usize) -> Result<f64> {
    let op = build_ulam(sys, theta, n_bins)?;
    let h = srb_density(&op, SRB_TOL, SRB_MAX_ITER)?;
    Ok(h.expect(|x| sys.omega(x, op.theta)))
}

/// Truncation rule for the Green-Kubo sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GkTerms {
    /// Exactly this many correlation terms.
    Fixed(usize),
    /// Start at 30 terms and extend until the last term is below 1e-8
    /// (at most 200 terms).
    Auto,
}

impl Default for GkTerms {
    fn default() -> Self {
        GkTerms::Auto
    }
}

pub const GK_DEFAULT_TERMS: usize = 30;
pub const GK_MAX_TERMS: usize = 200;
pub const GK_TARGET: f64 = 1e-8;
pub const GK_WARN: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GreenKubo {
    pub var2: f64,
    /// `mu(omega_hat * omega_hat o f^k)` for `k = 0..=terms`.
    pub correlations: Vec<f64>,
    pub terms: usize,
    pub truncation_estimate: f64,
}

/// Per-fiber output of one Ulam solve.
#[derive(Debug, Clone)]
pub struct FiberStats {
    pub theta: f64,
    pub omega_bar: f64,
    pub green_kubo: GreenKubo,
    pub density: SrbDensity,
}

pub fn fiber_stats<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, n_bins: usize, terms: GkTerms) -> Result<FiberStats> {
    let op = build_ulam(sys, theta, n_bins)?;
    let density = srb_density(&op, SRB_TOL, SRB_MAX_ITER)?;
    let n = op.n_bins;
    let t = op.theta;
    let omega: Vec<f64> = (0..n).map(|i| sys.omega(density.midpoint(i), t)).collect();
    let masses = density.masses();
    let omega_bar: f64 = masses.iter().zip(&omega).map(|(m, w)| m * w).sum();
    let hat: Vec<f64> = omega.iter().map(|w| w - omega_bar).collect();

    let (k_min, k_max) = match terms {
        GkTerms::Fixed(k) => {
            if k < 1 {
                return Err(Error::InvalidParameter("Green-Kubo needs at least one term".into()));
            }
            (k, k)
        }
        GkTerms::Auto => (GK_DEFAULT_TERMS, GK_MAX_TERMS),
    };
    let mut g: Vec<f64> = masses.iter().zip(&hat).map(|(m, w)| m * w).collect();
    let mut scratch = vec![0.0; n];
    let dot = |v: &[f64]| v.iter().zip(&hat).map(|(a, b)| a * b).sum::<f64>();
    let mut correlations = vec![dot(&g)];
    let mut k = 0;
    while k < k_max {
        op.push(&g, &mut scratch);
        std::mem::swap(&mut g, &mut scratch);
        k += 1;
        correlations.push(dot(&g));
        if k >= k_min && correlations[k].abs() < GK_TARGET {
            break;
        }
    }
    let var2 = correlations[0] + 2.0 * correlations[1..].iter().sum::<f64>();
    let last = correlations[k].abs();
    if last > GK_WARN {
        log::warn!("Green-Kubo truncation at theta = {t}: last term {last:e} after {k} terms");
    }
    Ok(FiberStats {
        theta: t,
        omega_bar,
        green_kubo: GreenKubo {
            var2,
            correlations,
            terms: k,
            truncation_estimate: last,
        },
        density,
    })
}

pub fn green_kubo_var2<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, n_bins: usize, terms: GkTerms) -> Result<GreenKubo> {
    Ok(fiber_stats(sys, theta, n_bins, terms)?.green_kubo)
}

/// `omega_bar`, its derivative, `Var^2` and (optionally) `psi_bar_star` on an
/// equispaced grid of the slow circle.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowFields {
    pub theta: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub omega_bar_prime: Vec<f64>,
    pub var2: Vec<f64>,
    /// NaN where not computed.
    pub psi_bar_star: Vec<f64>,
    pub gk_terms: usize,
    pub n_bins: usize,
    /// `max |D_h - D_2h| / 3` over the grid, a Richardson estimate of the
    /// central-difference error in `omega_bar_prime`.
    pub derivative_error: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    theta: f64,
    omega_bar: f64,
    omega_bar_prime: f64,
    var2: f64,
    psi_bar_star: f64,
}

/// Minimum `Var^2` below which the non-degeneracy warning fires.
pub const VAR2_WARN: f64 = 1e-8;

impl SlowFields {
    /// Fields from grid samples; the derivative is taken by central differences.
    pub fn from_samples(omega_bar: Vec<f64>, var2: Vec<f64>) -> Result<Self> {
        let m = omega_bar.len();
        if m < 8 || var2.len() != m {
            return Err(Error::InvalidParameter(format!(
                "need matching grids of at least 8 points (got {m} and {})",
                var2.len()
            )));
        }
        let (prime, derivative_error) = central_difference(&omega_bar);
        Ok(Self {
            theta: (0..m).map(|i| i as f64 / m as f64).collect(),
            omega_bar,
            omega_bar_prime: prime,
            var2,
            psi_bar_star: vec![f64::NAN; m],
            gk_terms: 0,
            n_bins: 0,
            derivative_error,
        })
    }

    /// Fields from closed-form functions sampled on `m` points.
    pub fn from_functions<A, B, C>(m: usize, omega_bar: A, omega_bar_prime: B, var2: C) -> Self
    where
        A: Fn(f64) -> f64,
        B: Fn(f64) -> f64,
        C: Fn(f64) -> f64,
    {
        let theta: Vec<f64> = (0..m).map(|i| i as f64 / m as f64).collect();
        Self {
            omega_bar: theta.iter().map(|t| omega_bar(*t)).collect(),
            omega_bar_prime: theta.iter().map(|t| omega_bar_prime(*t)).collect(),
            var2: theta.iter().map(|t| var2(*t)).collect(),
            psi_bar_star: vec![f64::NAN; m],
            theta,
            gk_terms: 0,
            n_bins: 0,
            derivative_error: 0.0,
        }
    }

    pub fn m(&self) -> usize {
        self.theta.len()
    }

    pub fn min_var2(&self) -> f64 {
        self.var2.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when `Var^2` is bounded away from zero on the grid. This is only
    /// a proxy for the non-coboundary assumption, which cannot be verified.
    pub fn nondegenerate(&self) -> bool {
        self.min_var2() > VAR2_WARN
    }

    pub fn has_psi_bar_star(&self) -> bool {
        self.psi_bar_star.iter().all(|v| v.is_finite())
    }

    /// Insert `psi_bar_star` sampled on another equispaced grid.
    pub fn with_psi_bar_star(mut self, values: &[f64]) -> Self {
        if values.len() == self.m() {
            self.psi_bar_star = values.to_vec();
        } else {
            let s = PeriodicSpline::new(values);
            self.psi_bar_star = self.theta.iter().map(|t| s.eval(*t)).collect();
        }
        self
    }

    pub fn interp(&self) -> FieldInterp {
        FieldInterp {
            omega_bar: PeriodicSpline::new(&self.omega_bar),
            omega_bar_prime: PeriodicSpline::new(&self.omega_bar_prime),
            var2: PeriodicSpline::new(&self.var2),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for i in 0..self.m() {
            wr.serialize(FieldRow {
                theta: self.theta[i],
                omega_bar: self.omega_bar[i],
                omega_bar_prime: self.omega_bar_prime[i],
                var2: self.var2[i],
                psi_bar_star: self.psi_bar_star[i],
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows: Vec<FieldRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
        let m = rows.len();
        if m < 8 {
            return Err(Error::Format(format!("only {m} rows")));
        }
        for (i, r) in rows.iter().enumerate() {
            if (r.theta - i as f64 / m as f64).abs() > 1e-12 {
                return Err(Error::Format(format!("row {i}: theta {} is not on the equispaced grid", r.theta)));
            }
        }
        Ok(Self {
            theta: rows.iter().map(|r| r.theta).collect(),
            omega_bar: rows.iter().map(|r| r.omega_bar).collect(),
            omega_bar_prime: rows.iter().map(|r| r.omega_bar_prime).collect(),
            var2: rows.iter().map(|r| r.var2).collect(),
            psi_bar_star: rows.iter().map(|r| r.psi_bar_star).collect(),
            gk_terms: 0,
            n_bins: 0,
            derivative_error: f64::NAN,
        })
    }
}

/// Periodic central differences and the Richardson error estimate.
fn central_difference(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.len();
    let h = 1.0 / m as f64;
    let at = |i: isize| v[i.rem_euclid(m as isize) as usize];
    let mut err: f64 = 0.0;
    let d = (0..m as isize)
        .map(|i| {
            let d1 = (at(i + 1) - at(i - 1)) / (2.0 * h);
            let d2 = (at(i + 2) - at(i - 2)) / (4.0 * h);
            err = err.max((d1 - d2).abs() / 3.0);
            d1
        })
        .collect();
    (d, err)
}

/// Cubic periodic interpolants of the slow fields.
#[derive(Debug, Clone)]
pub struct FieldInterp {
    pub omega_bar: PeriodicSpline,
    pub omega_bar_prime: PeriodicSpline,
    pub var2: PeriodicSpline,
}

impl FieldInterp {
    #[inline]
    pub fn drift(&self, theta: f64) -> f64 {
        self.omega_bar.eval(theta)
    }

    /// Derivative of the drift interpolant (consistent with `drift`).
    #[inline]
    pub fn drift_prime(&self, theta: f64) -> f64 {
        self.omega_bar.deriv(theta)
    }

    #[inline]
    pub fn var2(&self, theta: f64) -> f64 {
        self.var2.eval(theta).max(0.0)
    }

    #[inline]
    pub fn var(&self, theta: f64) -> f64 {
        self.var2(theta).sqrt()
    }
}

/// Drift and Green-Kubo variance on `m` equispaced slow angles.
pub fn slow_fields<S: FastSlowSystem + ?Sized>(sys: &S, m: usize, n_bins: usize, terms: GkTerms) -> Result<SlowFields> {
    if m < 64 {
        return Err(Error::InvalidParameter(format!("m = {m} must be at least 64")));
    }
    let stats: Result<Vec<(f64, f64, usize)>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let fs = fiber_stats(sys, j as f64 / m as f64, n_bins, terms)?;
            Ok((fs.omega_bar, fs.green_kubo.var2, fs.green_kubo.terms))
        })
        .collect();
    let stats = stats?;
    let omega_bar: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let var2: Vec<f64> = stats.iter().map(|s| s.1.max(0.0)).collect();
    let gk_terms = stats.iter().map(|s| s.2).max().unwrap_or(0);
    let mut fields = SlowFields::from_samples(omega_bar, var2)?;
    fields.gk_terms = gk_terms;
    fields.n_bins = n_bins;
    if !fields.nondegenerate() {
        log::warn!(
            "min Var^2 = {:e} on the grid: the drift observable may be degenerate on some fibers",
            fields.min_var2()
        );
    }
    Ok(fields)
}
