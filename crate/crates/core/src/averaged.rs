//! The averaged slow flow `d theta / dt = omega_bar(theta)`, its zeros and the
//! variance of the linearised fluctuations around it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::reduce;
use crate::transfer::{FieldInterp, SlowFields};

pub const MAX_ODE_STEPS: usize = 100_000_000;
pub const ZERO_TOL: f64 = 1e-10;
pub const DEGENERATE_SLOPE: f64 = 1e-4;

/// RK4 solution of the averaged equation; `values` are lifted angles.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub theta0: f64,
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub step: f64,
}

impl OdeSolution {
    /// Cubic Hermite interpolation of the lifted solution at time `t`.
    pub fn at(&self, interp: &FieldInterp, t: f64) -> f64 {
        let n = self.t_grid.len() - 1;
        if t <= 0.0 || n == 0 {
            return self.values[0];
        }
        let s = (t / self.step).min(n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let u = s - k as f64;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (d0, d1) = (interp.drift(y0) * self.step, interp.drift(y1) * self.step);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * d0 + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * d1
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

pub fn solve_averaged(fields: &SlowFields, theta0: f64, t_max: f64, step: f64) -> Result<OdeSolution> {
    solve_averaged_interp(&fields.interp(), theta0, t_max, step)
}

pub fn solve_averaged_interp(interp: &FieldInterp, theta0: f64, t_max: f64, step: f64) -> Result<OdeSolution> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::OutOfRange {
            what: "ODE step must lie in (0, 0.01]",
            value: step,
        });
    }
    if !(t_max >= 0.0) {
        return Err(Error::OutOfRange {
            what: "final time must be non-negative",
            value: t_max,
        });
    }
    let n = (t_max / step).ceil().max(1.0) as usize;
    if n > MAX_ODE_STEPS {
        return Err(Error::ResourceLimit {
            requested: n,
            max: MAX_ODE_STEPS,
        });
    }
    let h = t_max / n as f64;
    let f = |y: f64| interp.drift(y);
    let mut values = Vec::with_capacity(n + 1);
    let mut y = theta0;
    values.push(y);
    for _ in 0..n {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        values.push(y);
    }
    Ok(OdeSolution {
        theta0,
        t_grid: (0..=n).map(|k| k as f64 * h).collect(),
        values,
        step: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroKind {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zero {
    pub theta: f64,
    pub slope: f64,
    pub kind: ZeroKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZeroSet {
    pub zeros: Vec<Zero>,
}

impl ZeroSet {
    /// No zeros: the slow variable rotates.
    pub fn is_rotation(&self) -> bool {
        self.zeros.is_empty()
    }

    pub fn stable(&self) -> impl Iterator<Item = &Zero> {
        self.zeros.iter().filter(|z| z.kind == ZeroKind::Stable)
    }

    pub fn unstable(&self) -> impl Iterator<Item = &Zero> {
        self.zeros.iter().filter(|z| z.kind == ZeroKind::Unstable)
    }

    /// Index of the stable zero whose basin contains `theta`. Basins are the
    /// arcs between consecutive unstable zeros.
    pub fn basin_of(&self, theta: f64) -> Option<usize> {
        let t = reduce(theta);
        let unstable: Vec<f64> = self.unstable().map(|z| z.theta).collect();
        let stable: Vec<(usize, f64)> = self
            .zeros
            .iter()
            .enumerate()
            .filter(|(_, z)| z.kind == ZeroKind::Stable)
            .map(|(i, z)| (i, z.theta))
            .collect();
        if stable.is_empty() {
            return None;
        }
        if stable.len() == 1 {
            return Some(stable[0].0);
        }
        for &(i, s) in &stable {
            let next = unstable.iter().map(|u| reduce(u - s)).fold(f64::INFINITY, f64::min);
            let prev = unstable.iter().map(|u| reduce(s - u)).fold(f64::INFINITY, f64::min);
            let from_prev = reduce(t - (s - prev));
            if from_prev < prev + next {
                return Some(i);
            }
        }
        None
    }
}

/// Bracket sign changes of the drift interpolant on the field grid, refine by
/// bisection, and classify by the sign of `omega_bar_prime`.
pub fn find_zeros(fields: &SlowFields) -> Result<ZeroSet> {
    let interp = fields.interp();
    let m = fields.m();
    let h = 1.0 / m as f64;
    let negative = |v: f64| v < 0.0;
    let mut zeros = Vec::new();
    for i in 0..m {
        let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
        let (fa, fb) = (fields.omega_bar[i], fields.omega_bar[(i + 1) % m]);
        if negative(fa) == negative(fb) {
            continue;
        }
        let (mut lo, mut hi) = (a, b);
        let rising = negative(fa);
        while hi - lo > ZERO_TOL {
            let mid = 0.5 * (lo + hi);
            if negative(interp.drift(mid)) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = if fb == 0.0 { b } else if fa == 0.0 { a } else { 0.5 * (lo + hi) };
        let theta = reduce(theta);
        let slope = interp.omega_bar_prime.eval(theta);
        if slope.abs() < DEGENERATE_SLOPE || (slope > 0.0) != rising {
            return Err(Error::DegenerateZero { theta, slope });
        }
        zeros.push(Zero {
            theta,
            slope,
            kind: if slope < 0.0 { ZeroKind::Stable } else { ZeroKind::Unstable },
        });
    }
    zeros.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    debug_assert!(zeros.len() % 2 == 0);
    Ok(ZeroSet { zeros })
}

/// Variance of the linearised fluctuation along an averaged trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCurve {
    pub theta0: f64,
    pub t_grid: Vec<f64>,
    pub var_t2: Vec<f64>,
    /// `int_0^t omega_bar'(theta_bar(s)) ds` on the same grid.
    pub log_stretch: Vec<f64>,
}

impl VarianceCurve {
    pub fn final_value(&self) -> f64 {
        *self.var_t2.last().unwrap()
    }

    /// Linear interpolation at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        interp_linear(&self.t_grid, &self.var_t2, t)
    }

    pub fn log_stretch_at(&self, t: f64) -> f64 {
        interp_linear(&self.t_grid, &self.log_stretch, t)
    }
}

fn interp_linear(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len() - 1;
    if n == 0 || t <= x[0] {
        return y[0];
    }
    let h = x[1] - x[0];
    let s = ((t - x[0]) / h).min(n as f64);
    let k = (s.floor() as usize).min(n - 1);
    let u = s - k as f64;
    y[k] + u * (y[k + 1] - y[k])
}

/// `Var_t^2 = int_0^t exp(2 int_s^t a) b ds` with `a = omega_bar'(theta_bar)`,
/// `b = Var^2(theta_bar)`, by cumulative Simpson on the ODE grid.
pub fn variance_curve(fields: &SlowFields, sol: &OdeSolution) -> VarianceCurve {
    variance_curve_interp(&fields.interp(), sol)
}

pub fn variance_curve_interp(interp: &FieldInterp, sol: &OdeSolution) -> VarianceCurve {
    let n = sol.values.len() - 1;
    let h = sol.step;
    let a: Vec<f64> = sol.values.iter().map(|y| interp.drift_prime(*y)).collect();
    let b: Vec<f64> = sol.values.iter().map(|y| interp.var2(*y)).collect();
    // Cumulative integral of a.
    let mut big_a = vec![0.0; n + 1];
    for k in 0..n {
        big_a[k + 1] = big_a[k] + cell_integral(&a, k, h);
    }
    let mut w = vec![0.0; n + 1];
    for k in 0..n {
        // Integrand g(s) = exp(2 (A_{k+1} - A(s))) b(s) on the three nodes of
        // the Simpson panel containing cell k.
        let (j0, j1, j2, left) = panel(k, n);
        let g = |j: usize| (2.0 * (big_a[k + 1] - big_a[j])).exp() * b[j];
        let gj = [g(j0), g(j1), g(j2)];
        let cell = if n == 1 {
            0.5 * h * (gj[0] + gj[1])
        } else if left {
            h * (5.0 * gj[0] + 8.0 * gj[1] - gj[2]) / 12.0
        } else {
            h * (-gj[0] + 8.0 * gj[1] + 5.0 * gj[2]) / 12.0
        };
        w[k + 1] = (2.0 * (big_a[k + 1] - big_a[k])).exp() * w[k] + cell;
    }
    VarianceCurve {
        theta0: sol.theta0,
        t_grid: sol.t_grid.clone(),
        var_t2: w,
        log_stretch: big_a,
    }
}

/// Three-node panel used for cell `k` (`[t_k, t_{k+1}]`) and whether the cell
/// is the left half of it.
fn panel(k: usize, n: usize) -> (usize, usize, usize, bool) {
    if n == 1 {
        (0, 1, 1, true)
    } else if k + 2 <= n {
        (k, k + 1, k + 2, true)
    } else {
        (k - 1, k, k + 1, false)
    }
}

fn cell_integral(v: &[f64], k: usize, h: f64) -> f64 {
    let n = v.len() - 1;
    let (j0, j1, j2, left) = panel(k, n);
    if n == 1 {
        0.5 * h * (v[0] + v[1])
    } else if left {
        h * (5.0 * v[j0] + 8.0 * v[j1] - v[j2]) / 12.0
    } else {
        h * (-v[j0] + 8.0 * v[j1] + 5.0 * v[j2]) / 12.0
    }
}

/// `Var^2 / (2 |omega_bar'|)` at a zero: the stationary variance of the
/// linearised fluctuation.
pub fn ou_variance(fields: &SlowFields, zero: &Zero) -> f64 {
    fields.interp().var2(zero.theta) / (2.0 * zero.slope.abs())
}

/// `(t, theta_bar(t), Var_t^2)` rows.
pub fn write_curve_csv<W: Write>(sol: &OdeSolution, var: &VarianceCurve, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "theta_bar", "var_t2"])?;
    for k in 0..sol.t_grid.len() {
        wr.serialize((sol.t_grid[k], sol.values[k], var.var_t2[k]))?;
    }
    wr.flush()?;
    Ok(())
}
