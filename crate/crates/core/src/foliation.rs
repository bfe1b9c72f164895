//! Center leaves, the `eps = 0` conjugacy between fiber maps, and the
//! fixed-point multiplier obstruction to smooth holonomy.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::CenterField;
use crate::numerics::wrap_half;
use crate::systems::{reduce, FastSlowSystem, PhasePoint};

/// Integral curve `theta -> x(theta)` of the center direction `(s_hat, 1)`.
#[derive(Debug, Clone, Serialize)]
pub struct CenterLeaf {
    pub theta_grid: Vec<f64>,
    /// Lifted `x` values (not reduced mod 1).
    pub x_values: Vec<f64>,
    /// `|x(theta0 + 1) - x(theta0)|` mod 1.
    pub closure_gap: f64,
    pub length: f64,
}

impl CenterLeaf {
    /// `sqrt(1 + K^2)`, the graph-length bound for slopes in `[-K, K]`.
    pub fn length_bound(k_radius: f64) -> f64 {
        (1.0 + k_radius * k_radius).sqrt()
    }
}

/// `x` at `theta1` of the leaf through `(x0, theta0)`, by RK4 with `n_steps`.
/// The leaf is walked in the lifted `theta`, so `theta1` may exceed 1.
pub fn transport<S: FastSlowSystem + ?Sized>(
    sys: &S,
    cf: &CenterField,
    x0: f64,
    theta0: f64,
    theta1: f64,
    n_steps: usize,
) -> Result<f64> {
    let leaf = leaf_segment(sys, cf, x0, theta0, theta1, n_steps)?;
    Ok(*leaf.1.last().unwrap())
}

fn leaf_segment<S: FastSlowSystem + ?Sized>(
    sys: &S,
    cf: &CenterField,
    x0: f64,
    theta0: f64,
    theta1: f64,
    n_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("leaf needs at least one step".into()));
    }
    let h = (theta1 - theta0) / n_steps as f64;
    let s = |x: f64, t: f64| cf.slope_at(sys, PhasePoint::new(x, t));
    let mut thetas = Vec::with_capacity(n_steps + 1);
    let mut xs = Vec::with_capacity(n_steps + 1);
    let (mut x, mut t) = (x0, theta0);
    thetas.push(t);
    xs.push(x);
    // each step moves at most K |h|; anything more is a field defect
    let bound = cf.k_radius * (theta1 - theta0).abs() + 1.0;
    for k in 0..n_steps {
        let k1 = s(x, t);
        let k2 = s(x + 0.5 * h * k1, t + 0.5 * h);
        let k3 = s(x + 0.5 * h * k2, t + 0.5 * h);
        let k4 = s(x + h * k3, t + h);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = theta0 + (k + 1) as f64 * h;
        if !x.is_finite() || (x - x0).abs() > bound {
            return Err(Error::LeafEscape(format!("leaf from ({x0}, {theta0}) left the field at theta = {t}")));
        }
        thetas.push(t);
        xs.push(x);
    }
    Ok((thetas, xs))
}

/// The leaf through `p0`, once around the slow circle.
pub fn integrate_leaf<S: FastSlowSystem + ?Sized>(sys: &S, cf: &CenterField, p0: PhasePoint, n_steps: usize) -> Result<CenterLeaf> {
    let (theta_grid, x_values) = leaf_segment(sys, cf, p0.x, p0.theta, p0.theta + 1.0, n_steps)?;
    let closure_gap = wrap_half(x_values[n_steps] - x_values[0]).abs();
    // arclength from the slopes at the nodes (trapezoid on sqrt(1 + s^2))
    let h = 1.0 / n_steps as f64;
    let arc: Vec<f64> = theta_grid
        .iter()
        .zip(&x_values)
        .map(|(t, x)| (1.0 + cf.slope_at(sys, PhasePoint::new(*x, *t)).powi(2)).sqrt())
        .collect();
    let length = h * (arc.iter().sum::<f64>() - 0.5 * (arc[0] + arc[n_steps]));
    Ok(CenterLeaf {
        theta_grid,
        x_values,
        closure_gap,
        length,
    })
}

/// Write leaves as a long-format polyline table.
pub fn write_leaves_csv<W: Write>(leaves: &[CenterLeaf], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["leaf", "theta", "x"])?;
    for (i, leaf) in leaves.iter().enumerate() {
        for (t, x) in leaf.theta_grid.iter().zip(&leaf.x_values) {
            wr.serialize((i, t, x))?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// `h(., theta)` with `f(h(x), theta) = h(f(x, 0))` and `h(0) = 0`, on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyMap {
    pub theta: f64,
    pub depth: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `sup |f_theta(h(x)) - h(f_0(x))|` over the grid (mod 1).
    pub residual: f64,
    /// A-priori truncation bound `lambda_min^-depth`.
    pub order_error: f64,
}

impl ConjugacyMap {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "h"])?;
        for (x, h) in self.grid.iter().zip(&self.values) {
            wr.serialize((x, h))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Inverse of the lifted fiber map restricted to `[0, 1)`, for `y` in
/// `[f(0), f(0) + degree)`.
fn inverse_branch<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, y: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x = (y - sys.lift(0.0, theta)) / sys.degree() as f64;
    for _ in 0..100 {
        let g = sys.lift(x, theta) - y;
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if g.abs() < 1e-15 || hi - lo < 1e-16 {
            break;
        }
        let nx = x - g / sys.dfdx(x, theta);
        x = if nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
    }
    x.clamp(0.0, 1.0)
}

/// `h(x, theta)` by inverse-branch descent along the `f_0` itinerary of `x`.
pub fn conjugate_point<S: FastSlowSystem + ?Sized>(sys: &S, theta: f64, x: f64, depth: usize) -> f64 {
    let mut digits = Vec::with_capacity(depth);
    let mut y = reduce(x);
    let base0 = sys.lift(0.0, 0.0);
    let base = sys.lift(0.0, theta);
    for _ in 0..depth {
        let v = sys.lift(y, 0.0) - base0;
        let d = v.floor().clamp(0.0, (sys.degree() - 1) as f64);
        digits.push(d);
        y = v - d;
        if !(0.0..1.0).contains(&y) {
            y = reduce(y);
        }
    }
    // h(f_0^depth x) ~ f_0^depth x; pull back through the f_theta branches
    for d in digits.iter().rev() {
        y = inverse_branch(sys, theta, base + d + y);
    }
    y
}

pub fn conjugacy<S: FastSlowSystem + ?Sized>(
    sys: &S,
    theta: f64,
    n_grid: usize,
    depth: usize,
    tol: Option<f64>,
) -> Result<ConjugacyMap> {
    if n_grid < 2 {
        return Err(Error::InvalidParameter("conjugacy grid needs at least 2 points".into()));
    }
    if !sys.fixes_origin() {
        return Err(Error::InvalidParameter("conjugacy normalisation needs x = 0 fixed in every fiber".into()));
    }
    let grid: Vec<f64> = (0..n_grid).map(|i| i as f64 / n_grid as f64).collect();
    let values: Vec<f64> = grid.par_iter().map(|x| conjugate_point(sys, theta, *x, depth)).collect();
    let residual = grid
        .par_iter()
        .zip(&values)
        .map(|(x, h)| {
            let lhs = sys.lift(*h, theta);
            let rhs = conjugate_point(sys, theta, reduce(sys.lift(*x, 0.0)), depth);
            wrap_half(lhs - rhs).abs()
        })
        .reduce(|| 0.0, f64::max);
    let order_error = sys.lambda_min().powi(-(depth as i32));
    if let Some(tol) = tol {
        if residual > tol {
            return Err(Error::InsufficientDepth { depth, residual, tol });
        }
    }
    Ok(ConjugacyMap {
        theta,
        depth,
        grid,
        values,
        residual,
        order_error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplierReport {
    pub theta: Vec<f64>,
    /// `d f / d x (0, theta)`.
    pub multiplier: Vec<f64>,
    pub spread: f64,
    pub obstruction: bool,
    pub statement: String,
}

pub const MULTIPLIER_THRESHOLD: f64 = 1e-9;

/// Fixed-point multipliers at `x = 0` across fibers.
pub fn multiplier_obstruction<S: FastSlowSystem + ?Sized>(sys: &S, thetas: &[f64]) -> Result<MultiplierReport> {
    if thetas.is_empty() {
        return Err(Error::InvalidParameter("no fibers given".into()));
    }
    if !sys.fixes_origin() {
        return Err(Error::InvalidParameter("x = 0 is not fixed in every fiber".into()));
    }
    let multiplier: Vec<f64> = thetas.iter().map(|t| sys.dfdx(0.0, *t)).collect();
    let max = multiplier.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = multiplier.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    let obstruction = spread > MULTIPLIER_THRESHOLD;
    let statement = if obstruction {
        format!(
            "fixed-point multipliers differ by {spread:.6}: the fiber maps are not C^1 conjugate, \
             so center holonomies cannot be C^1; given a physical measure, the center foliation is \
             not absolutely continuous"
        )
    } else {
        "multipliers agree: no obstruction detected".to_string()
    };
    Ok(MultiplierReport {
        theta: thetas.to_vec(),
        multiplier,
        spread,
        obstruction,
        statement,
    })
}

impl MultiplierReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["theta", "multiplier"])?;
        for (t, m) in self.theta.iter().zip(&self.multiplier) {
            wr.serialize((t, m))?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomyLevel {
    pub n_points: usize,
    /// Variance of `log(Delta H / Delta x)` over adjacent pairs.
    pub log_ratio_var: f64,
    pub log_ratio_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomyReport {
    pub theta_a: f64,
    pub theta_b: f64,
    pub levels: Vec<HolonomyLevel>,
    /// Holonomy map at the finest level, `(x at theta_a, x at theta_b)`.
    pub map: Vec<(f64, f64)>,
    /// Whether the variance grows at every refinement.
    pub growing: bool,
}

/// Slide `n_points` equispaced points along leaves from `theta_a` to
/// `theta_b`, doubling the count `refinements` times.
pub fn holonomy_probe<S: FastSlowSystem + ?Sized>(
    sys: &S,
    cf: &CenterField,
    theta_a: f64,
    theta_b: f64,
    n_points: usize,
    refinements: usize,
    leaf_steps: usize,
) -> Result<HolonomyReport> {
    if n_points < 4 {
        return Err(Error::InvalidParameter("holonomy probe needs at least 4 points".into()));
    }
    let n_max = n_points << refinements;
    let fine: Vec<f64> = (0..n_max)
        .into_par_iter()
        .map(|i| transport(sys, cf, i as f64 / n_max as f64, theta_a, theta_b, leaf_steps))
        .collect::<Result<_>>()?;
    let mut levels = Vec::with_capacity(refinements + 1);
    for r in 0..=refinements {
        let n = n_points << r;
        let stride = n_max / n;
        let dx = 1.0 / n as f64;
        let logs: Vec<f64> = (0..n)
            .map(|i| {
                let a = fine[i * stride];
                let b = if i + 1 < n { fine[(i + 1) * stride] } else { fine[0] + 1.0 };
                ((b - a) / dx).ln()
            })
            .collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64;
        let max = logs.iter().map(|l| l.abs()).fold(0.0, f64::max);
        levels.push(HolonomyLevel {
            n_points: n,
            log_ratio_var: var,
            log_ratio_max: max,
        });
    }
    let growing = levels.windows(2).all(|w| w[1].log_ratio_var > w[0].log_ratio_var);
    Ok(HolonomyReport {
        theta_a,
        theta_b,
        levels,
        map: (0..n_max).map(|i| (i as f64 / n_max as f64, fine[i])).collect(),
        growing,
    })
}
