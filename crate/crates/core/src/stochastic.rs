//! Diffusion approximations of the slow variable: Euler-Maruyama paths of
//! `d Theta = omega_bar dt + sqrt(eps) Var dB`, the Gaussian first-order law,
//! the stationary density on the circle and the small-noise rate function.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::averaged::{solve_averaged_interp, variance_curve_interp, ZeroSet};
use crate::ensemble::EnsembleSamples;
use crate::error::{Error, Result};
use crate::numerics::{log_add_exp, log_exprel};
use crate::rng::stream;
use crate::transfer::{FieldInterp, SlowFields};

pub const MAX_EM_STEPS: usize = 100_000_000;

#[derive(Debug, Clone)]
pub struct SdeSpec {
    pub fields: SlowFields,
    interp: FieldInterp,
    pub epsilon: f64,
    pub step: f64,
    pub seed: u64,
}

impl SdeSpec {
    /// Step defaults to `eps / 10`.
    pub fn new(fields: &SlowFields, epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
        }
        if !fields.nondegenerate() {
            log::warn!("Var^2 vanishes somewhere on the grid; the diffusion is degenerate there");
        }
        Ok(Self {
            fields: fields.clone(),
            interp: fields.interp(),
            epsilon,
            step: epsilon / 10.0,
            seed,
        })
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= self.epsilon) {
            return Err(Error::OutOfRange {
                what: "Euler-Maruyama step must lie in (0, eps]",
                value: step,
            });
        }
        self.step = step;
        Ok(self)
    }

    pub fn interp(&self) -> &FieldInterp {
        &self.interp
    }
}

/// Endpoints at `t_max` of `n_paths` independent paths from `theta0`.
pub fn em_paths(spec: &SdeSpec, theta0: f64, t_max: f64, n_paths: usize) -> Result<EnsembleSamples> {
    Ok(em_snapshots(spec, theta0, &[t_max], n_paths)?.pop().unwrap())
}

/// Path values at each requested time (sorted ascending).
pub fn em_snapshots(spec: &SdeSpec, theta0: f64, times: &[f64], n_paths: usize) -> Result<Vec<EnsembleSamples>> {
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("snapshot times must be non-negative and sorted".into()));
    }
    let t_max = *times.last().unwrap();
    let n_steps = (t_max / spec.step).ceil() as usize;
    if n_steps > MAX_EM_STEPS {
        return Err(Error::ResourceLimit {
            requested: n_steps,
            max: MAX_EM_STEPS,
        });
    }
    let dt = if n_steps == 0 { 0.0 } else { t_max / n_steps as f64 };
    let marks: Vec<usize> = times
        .iter()
        .map(|t| if dt == 0.0 { 0 } else { (t / dt).round() as usize })
        .collect();
    let sq = (spec.epsilon * dt).sqrt();
    let interp = &spec.interp;
    let paths: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, i as u64);
            let mut y = theta0;
            let mut out = Vec::with_capacity(marks.len());
            let mut next = 0;
            for k in 0..=n_steps {
                while next < marks.len() && marks[next] == k {
                    out.push(y);
                    next += 1;
                }
                if k == n_steps {
                    break;
                }
                let z: f64 = rng.sample(StandardNormal);
                y += interp.drift(y) * dt + sq * interp.var(y) * z;
            }
            out
        })
        .collect();
    Ok(times
        .iter()
        .enumerate()
        .map(|(j, t)| EnsembleSamples {
            values: paths.iter().map(|p| p[j]).collect(),
            t: *t,
            epsilon: spec.epsilon,
            seed: spec.seed,
        })
        .collect())
}

/// Mean `theta_bar(t)` and variance `eps Var_t^2` of the first-order Gaussian
/// approximation started at `theta0`.
pub fn gaussian_process_law(fields: &SlowFields, theta0: f64, t: f64, epsilon: f64) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Ok((theta0, 0.0));
    }
    let interp = fields.interp();
    let step = (t / 2000.0).min(1e-3);
    let sol = solve_averaged_interp(&interp, theta0, t, step)?;
    let var = variance_curve_interp(&interp, &sol);
    Ok((sol.final_value(), epsilon * var.final_value()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianSpec {
    pub mean: f64,
    pub var: f64,
    pub weight: Option<f64>,
}

/// One Gaussian per stable zero, variance `eps Var^2 / (2 |omega_bar'|)`.
pub fn metastable_mixture(zeros: &ZeroSet, fields: &SlowFields, epsilon: f64) -> Result<Vec<GaussianSpec>> {
    let interp = fields.interp();
    let out: Vec<GaussianSpec> = zeros
        .stable()
        .map(|z| GaussianSpec {
            mean: z.theta,
            var: epsilon * interp.var2(z.theta) / (2.0 * z.slope.abs()),
            weight: None,
        })
        .collect();
    if out.is_empty() {
        return Err(Error::NoStableZero);
    }
    Ok(out)
}

/// Internal refinement of the stationary-density quadrature grid.
const STATIONARY_REFINE: usize = 8;

#[derive(Debug, Clone)]
pub struct StationaryDensity {
    pub theta: Vec<f64>,
    /// `Omega(theta) = -2 int_0^theta omega_bar / Var^2`.
    pub omega: Vec<f64>,
    /// `Omega(1)`.
    pub omega_period: f64,
    pub v_eps: f64,
    /// Log of the normaliser of the integral representation.
    pub log_z: f64,
    pub rho: Vec<f64>,
    pub epsilon: f64,
}

impl StationaryDensity {
    pub fn m(&self) -> usize {
        self.rho.len()
    }

    /// Periodic rectangle rule, the quadrature used for normalisation.
    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() / self.m() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["theta", "rho_eps", "omega_cap"])?;
        for i in 0..self.m() {
            wr.serialize((self.theta[i], self.rho[i], self.omega[i]))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Stationary density of the diffusion on the circle,
/// `rho(theta) ~ Var^-2(theta) int_theta^{theta+1} exp((Omega(s) - Omega(theta)) / eps) ds`.
pub fn stationary_density(fields: &SlowFields, epsilon: f64, m: usize) -> Result<StationaryDensity> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
    }
    if m < 16 {
        return Err(Error::InvalidParameter(format!("m = {m} must be at least 16")));
    }
    let interp = fields.interp();
    let n = m * STATIONARY_REFINE;
    let h = 1.0 / n as f64;
    let min_var2 = (0..4 * n)
        .map(|k| interp.var2.eval(k as f64 / (4 * n) as f64))
        .fold(f64::INFINITY, f64::min);
    if !(min_var2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stationary density needs Var^2 > 0 (minimum {min_var2:e})"
        )));
    }
    let g = |t: f64| interp.drift(t) / interp.var2(t);
    let mut omega = vec![0.0; n + 1];
    for k in 0..n {
        let a = k as f64 * h;
        omega[k + 1] = omega[k] - 2.0 * h / 6.0 * (g(a) + 4.0 * g(a + 0.5 * h) + g(a + h));
    }
    let period = omega[n];
    let phi: Vec<f64> = omega.iter().map(|o| o / epsilon).collect();
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Overflow("Omega / eps exceeds the floating-point range"));
    }
    // log of int over each fine cell of exp(phi), exact for piecewise-linear phi
    let cells: Vec<f64> = (0..n).map(|k| phi[k] + h.ln() + log_exprel(phi[k + 1] - phi[k])).collect();
    let mut suffix = vec![f64::NEG_INFINITY; n + 1];
    for k in (0..n).rev() {
        suffix[k] = log_add_exp(suffix[k + 1], cells[k]);
    }
    let total = suffix[0];
    let mut prefix = f64::NEG_INFINITY;
    let mut log_rho = Vec::with_capacity(m);
    for k in 0..n {
        if k % STATIONARY_REFINE == 0 {
            let t = k as f64 * h;
            // int_theta^{theta+1} = int_theta^1 + exp(phi(1)) int_0^theta
            let log_i = log_add_exp(suffix[k], prefix + phi[n]);
            log_rho.push(-interp.var2(t).ln() - phi[k] + log_i);
        }
        prefix = log_add_exp(prefix, cells[k]);
    }
    let shift = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_rho.iter().map(|l| (l - shift).exp()).collect();
    let mass = unnorm.iter().sum::<f64>() / m as f64;
    let rho: Vec<f64> = unnorm.iter().map(|u| u / mass).collect();
    let log_z = -(shift + mass.ln());

    let v_eps = if phi[n] == 0.0 {
        0.0
    } else {
        let (sign, log_num) = if phi[n] > 0.0 {
            (1.0, phi[n] + (-(-phi[n]).exp()).ln_1p())
        } else {
            (-1.0, (-(phi[n]).exp()).ln_1p())
        };
        let lv = log_num - total;
        if lv > f64::MAX.ln() {
            return Err(Error::Overflow("stationary drift v_eps"));
        }
        sign * lv.exp()
    };
    Ok(StationaryDensity {
        theta: (0..m).map(|i| i as f64 / m as f64).collect(),
        omega: (0..m).map(|i| omega[i * STATIONARY_REFINE]).collect(),
        omega_period: period,
        v_eps,
        log_z,
        rho,
        epsilon,
    })
}

/// `||L' rho||_1 / ||rho||_1` for the adjoint generator
/// `L' rho = -(omega_bar rho)' + (eps / 2) (Var^2 rho)''`, discretised with
/// fourth-order periodic central differences on the density grid.
pub fn adjoint_residual(fields: &SlowFields, density: &StationaryDensity) -> f64 {
    let interp = fields.interp();
    let m = density.m();
    let h = 1.0 / m as f64;
    let a: Vec<f64> = (0..m).map(|i| interp.drift(density.theta[i]) * density.rho[i]).collect();
    let b: Vec<f64> = (0..m).map(|i| interp.var2(density.theta[i]) * density.rho[i]).collect();
    let at = |v: &[f64], i: isize| v[i.rem_euclid(m as isize) as usize];
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m as isize {
        let d1 = (-at(&a, i + 2) + 8.0 * at(&a, i + 1) - 8.0 * at(&a, i - 1) + at(&a, i - 2)) / (12.0 * h);
        let d2 = (-at(&b, i + 2) + 16.0 * at(&b, i + 1) - 30.0 * at(&b, i) + 16.0 * at(&b, i - 1) - at(&b, i - 2))
            / (12.0 * h * h);
        num += (-d1 + 0.5 * density.epsilon * d2).abs();
        den += density.rho[i as usize].abs();
    }
    num / den
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFunctionResult {
    pub t: f64,
    pub theta0: f64,
    pub y_grid: Vec<f64>,
    /// `None` where shooting failed.
    pub v: Vec<Option<f64>>,
    pub shoot_p0: Vec<Option<f64>>,
    /// `Var_t^2` from the variance quadrature.
    pub var_t2: f64,
    /// Closed-form `xi(t) = (Var_t^2 / 2) exp(-int_0^t omega_bar')`.
    pub xi: f64,
    /// `d phi(t) / d p0` at `p0 = 0` from the variational equations.
    pub jacobian_at_zero: f64,
}

impl RateFunctionResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["y", "v", "p0", "quadratic"])?;
        for (k, y) in self.y_grid.iter().enumerate() {
            let fmt = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
            wr.write_record([
                y.to_string(),
                fmt(self.v[k]),
                fmt(self.shoot_p0[k]),
                (y * y / self.var_t2).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub const SHOOT_STEPS: usize = 2000;
pub const SHOOT_TOL: f64 = 1e-9;

/// Integrate the Hamiltonian system for `H = Var^2 p^2 / 4 + p omega_bar`
/// together with its variational equations and the action.
/// Returns `(phi(t), d phi(t)/d p0, action)`.
fn shoot(interp: &FieldInterp, theta0: f64, p0: f64, t: f64, n: usize) -> (f64, f64, f64) {
    let rhs = |s: &[f64; 5]| -> [f64; 5] {
        let (phi, p, xi, eta) = (s[0], s[1], s[2], s[3]);
        let (w, w1, w2) = interp.omega_bar.eval_all(phi);
        let (q, q1, q2) = interp.var2.eval_all(phi);
        [
            0.5 * q * p + w,
            -0.25 * q1 * p * p - w1 * p,
            0.5 * q1 * p * xi + 0.5 * q * eta + w1 * xi,
            -0.25 * q2 * p * p * xi - 0.5 * q1 * p * eta - w2 * p * xi - w1 * eta,
            0.25 * q * p * p,
        ]
    };
    let h = t / n as f64;
    let mut s = [theta0, p0, 0.0, 1.0, 0.0];
    for _ in 0..n {
        let k1 = rhs(&s);
        let k2 = rhs(&add(&s, &k1, 0.5 * h));
        let k3 = rhs(&add(&s, &k2, 0.5 * h));
        let k4 = rhs(&add(&s, &k3, h));
        for j in 0..5 {
            s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    (s[0], s[2], s[4])
}

fn add(s: &[f64; 5], k: &[f64; 5], h: f64) -> [f64; 5] {
    let mut o = *s;
    for j in 0..5 {
        o[j] += h * k[j];
    }
    o
}

/// `V(t, y)` by Newton shooting on the initial momentum.
pub fn rate_function(fields: &SlowFields, theta0: f64, t: f64, y_grid: &[f64]) -> Result<RateFunctionResult> {
    if !(0.1..=100.0).contains(&t) {
        return Err(Error::OutOfRange {
            what: "rate-function time must lie in [0.1, 100]",
            value: t,
        });
    }
    let interp = fields.interp();
    let n = SHOOT_STEPS;
    let sol = solve_averaged_interp(&interp, theta0, t, (t / n as f64).min(1e-2))?;
    let var = variance_curve_interp(&interp, &sol);
    let var_t2 = var.final_value();
    let xi = 0.5 * var_t2 * (-var.log_stretch.last().unwrap()).exp();
    let (theta_bar, jacobian_at_zero, _) = shoot(&interp, theta0, 0.0, t, n);

    let mut v = Vec::with_capacity(y_grid.len());
    let mut p0s = Vec::with_capacity(y_grid.len());
    for &y in y_grid {
        match newton_shoot(&interp, theta0, t, n, theta_bar + y, y / xi) {
            Ok((p0, action)) => {
                v.push(Some(action));
                p0s.push(Some(p0));
            }
            Err(e) => {
                log::warn!("{e}");
                v.push(None);
                p0s.push(None);
            }
        }
    }
    Ok(RateFunctionResult {
        t,
        theta0,
        y_grid: y_grid.to_vec(),
        v,
        shoot_p0: p0s,
        var_t2,
        xi,
        jacobian_at_zero,
    })
}

fn newton_shoot(interp: &FieldInterp, theta0: f64, t: f64, n: usize, target: f64, guess: f64) -> Result<(f64, f64)> {
    let mut p0 = guess;
    let mut miss = f64::INFINITY;
    for _ in 0..50 {
        let (phi, jac, action) = shoot(interp, theta0, p0, t, n);
        miss = phi - target;
        if !miss.is_finite() || !jac.is_finite() {
            break;
        }
        if miss.abs() <= SHOOT_TOL {
            return Ok((p0, action));
        }
        if jac.abs() < 1e-300 {
            break;
        }
        p0 -= miss / jac;
    }
    Err(Error::ShootingFailure {
        y: target,
        reason: format!("final miss {miss:e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaged::find_zeros;
    use std::f64::consts::TAU;

    #[test]
    fn zero_drift_density_is_inverse_variance() {
        let f = SlowFields::from_functions(128, |_| 0.0, |_| 0.0, |t| 1.0 + 0.5 * (TAU * t).cos());
        let d = stationary_density(&f, 1e-2, 256).unwrap();
        assert_eq!(d.v_eps, 0.0);
        let z = 1.0 / (0..4096).map(|k| 1.0 / (1.0 + 0.5 * (TAU * k as f64 / 4096.0).cos())).sum::<f64>() * 4096.0;
        for (t, r) in d.theta.iter().zip(&d.rho) {
            assert!((r - z / (1.0 + 0.5 * (TAU * t).cos())).abs() < 1e-6);
        }
    }

    #[test]
    fn balanced_drift_has_zero_flux() {
        let f = SlowFields::from_functions(256, |t| -(TAU * t).sin(), |t| -TAU * (TAU * t).cos(), |_| 0.5);
        let d = stationary_density(&f, 1e-2, 512).unwrap();
        assert!(d.v_eps.abs() < 1e-9, "{}", d.v_eps);
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flux_sign_is_opposite_to_mean_drift() {
        // v_eps = (exp(Omega(1)/eps) - 1) / int exp(Omega/eps) and Omega(1) = -2 int omega_bar / Var^2
        let f = SlowFields::from_functions(256, |t| 0.3 + 0.5 * (TAU * t).sin(), |t| 0.5 * TAU * (TAU * t).cos(), |_| 0.5);
        assert!(stationary_density(&f, 1e-2, 512).unwrap().v_eps < 0.0);
        let g = SlowFields::from_functions(256, |t| -0.3 + 0.5 * (TAU * t).sin(), |t| 0.5 * TAU * (TAU * t).cos(), |_| 0.5);
        assert!(stationary_density(&g, 1e-2, 512).unwrap().v_eps > 0.0);
    }

    #[test]
    fn tiny_epsilon_stays_finite() {
        let f = SlowFields::from_functions(256, |t| 1.0 + 0.5 * (TAU * t).sin(), |t| 0.5 * TAU * (TAU * t).cos(), |_| 0.5);
        let d = stationary_density(&f, 1e-6, 1024).unwrap();
        assert!(d.rho.iter().all(|r| r.is_finite() && *r >= 0.0));
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_for_sine() {
        let f = SlowFields::from_functions(256, |t| -(TAU * t).sin(), |t| -TAU * (TAU * t).cos(), |_| 0.3);
        let z = find_zeros(&f).unwrap();
        let mix = metastable_mixture(&z, &f, 1e-3).unwrap();
        assert_eq!(mix.len(), 1);
        assert!(mix[0].mean.abs() < 1e-9);
        assert!((mix[0].var - 1e-3 * 0.3 / (2.0 * TAU)).abs() < 1e-12);
        let rot = SlowFields::from_functions(64, |_| 1.0, |_| 0.0, |_| 0.3);
        assert!(matches!(metastable_mixture(&find_zeros(&rot).unwrap(), &rot, 1e-3), Err(Error::NoStableZero)));
    }

    #[test]
    fn brownian_rate_function() {
        let f = SlowFields::from_functions(64, |_| 0.0, |_| 0.0, |_| 1.0);
        let r = rate_function(&f, 0.2, 2.0, &[-0.1, 0.0, 0.05]).unwrap();
        assert!((r.v[0].unwrap() - 0.01 / 2.0).abs() < 1e-10);
        assert_eq!(r.v[1].unwrap(), 0.0);
        assert_eq!(r.shoot_p0[1].unwrap(), 0.0);
        assert!((r.v[2].unwrap() - 0.0025 / 2.0).abs() < 1e-10);
        assert!((r.xi - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_law_limits() {
        let f = SlowFields::from_functions(64, |_| 0.25, |_| 0.0, |_| 2.0);
        assert_eq!(gaussian_process_law(&f, 0.1, 0.0, 1e-3).unwrap(), (0.1, 0.0));
        let (m, v) = gaussian_process_law(&f, 0.1, 2.0, 1e-3).unwrap();
        assert!((m - 0.6).abs() < 1e-12 && (v - 4e-3).abs() < 1e-12);
    }

    #[test]
    fn em_zero_noise_follows_ode() {
        let f = SlowFields::from_functions(256, |t| -(TAU * t).sin(), |t| -TAU * (TAU * t).cos(), |_| 0.0);
        let spec = SdeSpec::new(&f, 1e-3, 1).unwrap();
        let s = em_paths(&spec, 0.2, 1.0, 4).unwrap();
        let exact = ((std::f64::consts::PI * 0.2).tan() * (-TAU).exp()).atan() / std::f64::consts::PI;
        assert!(s.values.iter().all(|v| (v - exact).abs() < 1e-3));
    }
}
