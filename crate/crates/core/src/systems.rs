//! Fast-slow maps `F(x, theta) = (f(x, theta), theta + eps * omega(x, theta))` on
//! the two-torus, the circle-angle type and orbit generation.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest trajectory `iterate` will materialise.
pub const MAX_TRAJECTORY_LEN: usize = 50_000_000;

/// Size of the random low-order perturbation used by dithered orbits.
/// Expanding maps shift digits out of the mantissa; without fresh digits an
/// `l * x` orbit in binary floating point collapses to 0 after ~53 steps.
/// A perturbation at the ulp level only adds about one random bit per step,
/// which the doubling map consumes exactly, so the low digits stay correlated
/// with the state; 2^-40 leaves a dozen fresh bits per step.
pub const DITHER: f64 = 1.0 / (1u64 << 40) as f64;

/// Reduce a real number to `[0, 1)`.
#[inline]
pub fn reduce(v: f64) -> f64 {
    let r = v - v.round_ties_even();
    let r = if r < 0.0 { r + 1.0 } else { r };
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A point of the circle `R / Z`, stored in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TorusAngle(f64);

impl TorusAngle {
    pub fn new(v: f64) -> Self {
        Self(reduce(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Signed shortest displacement from `other` to `self`, in `[-1/2, 1/2)`.
    pub fn delta_from(self, other: TorusAngle) -> f64 {
        crate::numerics::wrap_half(self.0 - other.0)
    }

    pub fn distance(self, other: TorusAngle) -> f64 {
        self.delta_from(other).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub fn new(x: f64, theta: f64) -> Self {
        Self {
            x: reduce(x),
            theta: reduce(theta),
        }
    }
}

/// First partial derivatives of `f` and `omega` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub fx: f64,
    pub ftheta: f64,
    pub wx: f64,
    pub wtheta: f64,
}

/// A smooth fast-slow map on the torus. `lift` is a lift of the fiber map
/// in `x`, so `lift(x + 1, theta) = lift(x, theta) + degree`.
pub trait FastSlowSystem: Send + Sync {
    fn epsilon(&self) -> f64;
    fn degree(&self) -> u32;
    fn lift(&self, x: f64, theta: f64) -> f64;
    fn omega(&self, x: f64, theta: f64) -> f64;
    fn partials(&self, x: f64, theta: f64) -> Partials;

    /// Lower bound on `d f / d x` over the torus. May be below 1 for
    /// covering maps that are not uniformly expanding.
    fn lambda_min(&self) -> f64;

    /// Upper bound on `|omega|`.
    fn omega_sup(&self) -> f64;

    fn with_epsilon(&self, epsilon: f64) -> Self
    where
        Self: Sized;

    fn describe(&self) -> String;

    #[inline]
    fn dfdx(&self, x: f64, theta: f64) -> f64 {
        self.partials(x, theta).fx
    }

    #[inline]
    fn lift_and_omega(&self, x: f64, theta: f64) -> (f64, f64) {
        (self.lift(x, theta), self.omega(x, theta))
    }

    /// Whether `x = 0` is fixed by every fiber map.
    fn fixes_origin(&self) -> bool {
        (0..64).all(|k| {
            let v = self.lift(0.0, k as f64 / 64.0);
            (v - v.round()).abs() < 1e-12
        })
    }
}

/// `f = l x + sin(2 pi theta) (alpha sin 2 pi x + beta sin 2 l pi x)`,
/// `omega = cos 2 pi x + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleFamily {
    ell: u32,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    omega_shift: f64,
    derivative_bound: f64,
}

impl ExampleFamily {
    /// Uniformly expanding member: requires `l - 2 pi (|alpha| + l |beta|) > 1`.
    pub fn new(ell: u32, alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        let sys = Self::covering(ell, alpha, beta, epsilon)?;
        if sys.derivative_bound <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "l - 2 pi (|alpha| + l |beta|) = {:.4} is not above 1",
                sys.derivative_bound
            )));
        }
        Ok(sys)
    }

    /// Any member with `l >= 2`, `beta > 0`. The fiber maps are degree-`l`
    /// circle maps but need not be expanding, or even monotone, everywhere.
    pub fn covering(ell: u32, alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if ell < 2 {
            return Err(Error::InvalidParameter(format!("degree {ell} must be at least 2")));
        }
        if !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need finite alpha and beta > 0, got alpha = {alpha}, beta = {beta}"
            )));
        }
        check_epsilon(epsilon)?;
        let l = ell as f64;
        Ok(Self {
            ell,
            alpha,
            beta,
            epsilon,
            omega_shift: 0.0,
            derivative_bound: l - TAU * (alpha.abs() + l * beta.abs()),
        })
    }

    /// Add a constant to `omega` (used for rotation-regime variants).
    pub fn with_omega_shift(mut self, shift: f64) -> Self {
        self.omega_shift = shift;
        self
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn omega_shift(&self) -> f64 {
        self.omega_shift
    }

    /// `d f / d x (0, theta)`, the multiplier of the fixed point `x = 0`.
    pub fn origin_multiplier(&self, theta: f64) -> f64 {
        let l = self.ell as f64;
        l + TAU * (TAU * theta).sin() * (self.alpha + l * self.beta)
    }
}

impl FastSlowSystem for ExampleFamily {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn degree(&self) -> u32 {
        self.ell
    }

    #[inline]
    fn lift(&self, x: f64, theta: f64) -> f64 {
        let l = self.ell as f64;
        l * x + (TAU * theta).sin() * (self.alpha * (TAU * x).sin() + self.beta * (TAU * l * x).sin())
    }

    #[inline]
    fn omega(&self, x: f64, _theta: f64) -> f64 {
        (TAU * x).cos() + self.omega_shift
    }

    #[inline]
    fn partials(&self, x: f64, theta: f64) -> Partials {
        let l = self.ell as f64;
        let (st, ct) = (TAU * theta).sin_cos();
        let (sx, cx) = (TAU * x).sin_cos();
        let (slx, clx) = (TAU * l * x).sin_cos();
        Partials {
            fx: l + st * TAU * (self.alpha * cx + l * self.beta * clx),
            ftheta: TAU * ct * (self.alpha * sx + self.beta * slx),
            wx: -TAU * sx,
            wtheta: 0.0,
        }
    }

    #[inline]
    fn dfdx(&self, x: f64, theta: f64) -> f64 {
        let l = self.ell as f64;
        l + (TAU * theta).sin() * TAU * (self.alpha * (TAU * x).cos() + l * self.beta * (TAU * l * x).cos())
    }

    #[inline]
    fn lift_and_omega(&self, x: f64, theta: f64) -> (f64, f64) {
        let l = self.ell as f64;
        let st = (TAU * theta).sin();
        let (sx, cx) = (TAU * x).sin_cos();
        // sin(2 l pi x) from the Chebyshev recurrence for the common case l = 2.
        let slx = if self.ell == 2 { 2.0 * sx * cx } else { (TAU * l * x).sin() };
        (l * x + st * (self.alpha * sx + self.beta * slx), cx + self.omega_shift)
    }

    fn lambda_min(&self) -> f64 {
        self.derivative_bound
    }

    fn omega_sup(&self) -> f64 {
        1.0 + self.omega_shift.abs()
    }

    fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    fn describe(&self) -> String {
        format!(
            "example_family(l={}, alpha={}, beta={}, eps={}, shift={})",
            self.ell, self.alpha, self.beta, self.epsilon, self.omega_shift
        )
    }
}

/// Skew product `f = l x`, `omega = a cos 2 pi x + b sin 2 pi theta + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewProduct {
    pub ell: u32,
    pub cos_x: f64,
    pub sin_theta: f64,
    pub offset: f64,
    epsilon: f64,
}

impl SkewProduct {
    pub fn new(ell: u32, cos_x: f64, sin_theta: f64, offset: f64, epsilon: f64) -> Result<Self> {
        if ell < 2 {
            return Err(Error::InvalidParameter(format!("degree {ell} must be at least 2")));
        }
        check_epsilon(epsilon)?;
        Ok(Self {
            ell,
            cos_x,
            sin_theta,
            offset,
            epsilon,
        })
    }
}

impl FastSlowSystem for SkewProduct {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn degree(&self) -> u32 {
        self.ell
    }

    #[inline]
    fn lift(&self, x: f64, _theta: f64) -> f64 {
        self.ell as f64 * x
    }

    #[inline]
    fn omega(&self, x: f64, theta: f64) -> f64 {
        self.cos_x * (TAU * x).cos() + self.sin_theta * (TAU * theta).sin() + self.offset
    }

    fn partials(&self, x: f64, theta: f64) -> Partials {
        Partials {
            fx: self.ell as f64,
            ftheta: 0.0,
            wx: -TAU * self.cos_x * (TAU * x).sin(),
            wtheta: TAU * self.sin_theta * (TAU * theta).cos(),
        }
    }

    #[inline]
    fn dfdx(&self, _x: f64, _theta: f64) -> f64 {
        self.ell as f64
    }

    fn lambda_min(&self) -> f64 {
        self.ell as f64
    }

    fn omega_sup(&self) -> f64 {
        self.cos_x.abs() + self.sin_theta.abs() + self.offset.abs()
    }

    fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    fn describe(&self) -> String {
        format!(
            "skew_product(l={}, a={}, b={}, c={}, eps={})",
            self.ell, self.cos_x, self.sin_theta, self.offset, self.epsilon
        )
    }
}

type Field = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A system assembled from user closures.
#[derive(Clone)]
pub struct CustomSystem {
    degree: u32,
    epsilon: f64,
    lambda_min: f64,
    omega_sup: f64,
    f: Field,
    fx: Field,
    ftheta: Field,
    omega: Field,
    wx: Field,
    wtheta: Field,
}

/// Closures for a [`CustomSystem`]: the fiber-map lift, `omega`, and their
/// partial derivatives.
pub struct CustomFields {
    pub f: Field,
    pub fx: Field,
    pub ftheta: Field,
    pub omega: Field,
    pub wx: Field,
    pub wtheta: Field,
}

impl CustomSystem {
    /// `lambda_min` and `sup |omega|` are estimated on a 512 x 512 grid.
    pub fn new(degree: u32, epsilon: f64, fields: CustomFields) -> Result<Self> {
        check_epsilon(epsilon)?;
        let n = 512;
        let mut lam = f64::INFINITY;
        let mut wsup: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (x, t) = (i as f64 / n as f64, j as f64 / n as f64);
                lam = lam.min((fields.fx)(x, t));
                wsup = wsup.max((fields.omega)(x, t).abs());
            }
        }
        if !(lam > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fiber maps are not monotone (min d f / d x = {lam})"
            )));
        }
        let sys = Self {
            degree,
            epsilon,
            lambda_min: lam,
            omega_sup: wsup,
            f: fields.f,
            fx: fields.fx,
            ftheta: fields.ftheta,
            omega: fields.omega,
            wx: fields.wx,
            wtheta: fields.wtheta,
        };
        let lift_err = (0..16)
            .map(|k| {
                let t = k as f64 / 16.0;
                ((sys.f)(1.0 + 0.3, t) - (sys.f)(0.3, t) - degree as f64).abs()
            })
            .fold(0.0, f64::max);
        if lift_err > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "f is not a degree-{degree} lift (defect {lift_err:e})"
            )));
        }
        Ok(sys)
    }

    /// Compare the supplied partials with central differences on an
    /// `n x n` grid; returns the largest discrepancy.
    pub fn validate_derivatives(&self, n: usize, tol: f64) -> Result<f64> {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (x, t) = ((i as f64 + 0.37) / n as f64, (j as f64 + 0.61) / n as f64);
                let cd = |g: &Field, dx: f64, dt: f64| (g(x + dx, t + dt) - g(x - dx, t - dt)) / (2.0 * h);
                let pairs = [
                    ((self.fx)(x, t), cd(&self.f, h, 0.0)),
                    ((self.ftheta)(x, t), cd(&self.f, 0.0, h)),
                    ((self.wx)(x, t), cd(&self.omega, h, 0.0)),
                    ((self.wtheta)(x, t), cd(&self.omega, 0.0, h)),
                ];
                for (a, b) in pairs {
                    worst = worst.max((a - b).abs() / a.abs().max(1.0));
                }
            }
        }
        if worst > tol {
            return Err(Error::InvalidParameter(format!(
                "supplied derivatives disagree with finite differences by {worst:e}"
            )));
        }
        Ok(worst)
    }
}

impl FastSlowSystem for CustomSystem {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }
    fn degree(&self) -> u32 {
        self.degree
    }
    fn lift(&self, x: f64, theta: f64) -> f64 {
        (self.f)(x, theta)
    }
    fn omega(&self, x: f64, theta: f64) -> f64 {
        (self.omega)(x, theta)
    }
    fn partials(&self, x: f64, theta: f64) -> Partials {
        Partials {
            fx: (self.fx)(x, theta),
            ftheta: (self.ftheta)(x, theta),
            wx: (self.wx)(x, theta),
            wtheta: (self.wtheta)(x, theta),
        }
    }
    fn dfdx(&self, x: f64, theta: f64) -> f64 {
        (self.fx)(x, theta)
    }
    fn lambda_min(&self) -> f64 {
        self.lambda_min
    }
    fn omega_sup(&self) -> f64 {
        self.omega_sup
    }
    fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }
    fn describe(&self) -> String {
        format!("custom(l={}, eps={})", self.degree, self.epsilon)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=0.1).contains(&epsilon) {
        return Err(Error::OutOfRange {
            what: "epsilon must lie in [0, 0.1]",
            value: epsilon,
        });
    }
    Ok(())
}

/// One application of the map.
#[inline]
pub fn step<S: FastSlowSystem + ?Sized>(sys: &S, p: PhasePoint) -> PhasePoint {
    let (fx, w) = sys.lift_and_omega(p.x, p.theta);
    PhasePoint {
        x: reduce(fx),
        theta: reduce(p.theta + sys.epsilon() * w),
    }
}

/// Orbit state that also carries the lifted slow coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedState {
    pub x: f64,
    pub theta: f64,
    pub lift: f64,
}

impl LiftedState {
    pub fn new(x: f64, theta_lift: f64) -> Self {
        Self {
            x: reduce(x),
            theta: reduce(theta_lift),
            lift: theta_lift,
        }
    }

    pub fn point(&self) -> PhasePoint {
        PhasePoint {
            x: self.x,
            theta: self.theta,
        }
    }

    /// Advance one step, perturbing the new `x` by a random amount below
    /// [`DITHER`] / 2 so the orbit keeps fresh low-order digits.
    #[inline]
    pub fn advance_dithered<S: FastSlowSystem + ?Sized, R: Rng + ?Sized>(&mut self, sys: &S, rng: &mut R) {
        let (fx, w) = sys.lift_and_omega(self.x, self.theta);
        let dl = sys.epsilon() * w;
        self.x = reduce(fx + DITHER * (rng.random::<f64>() - 0.5));
        self.lift += dl;
        self.theta = reduce(self.lift);
    }

    #[inline]
    pub fn advance<S: FastSlowSystem + ?Sized>(&mut self, sys: &S) {
        let (fx, w) = sys.lift_and_omega(self.x, self.theta);
        self.x = reduce(fx);
        self.lift += sys.epsilon() * w;
        self.theta = reduce(self.lift);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<PhasePoint>,
    pub theta_lift: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n` steps of the exact map; the trajectory holds `n + 1` points.
pub fn iterate<S: FastSlowSystem + ?Sized>(sys: &S, p0: PhasePoint, n: usize) -> Result<Trajectory> {
    if n + 1 > MAX_TRAJECTORY_LEN {
        return Err(Error::ResourceLimit {
            requested: n + 1,
            max: MAX_TRAJECTORY_LEN,
        });
    }
    let p0 = PhasePoint::new(p0.x, p0.theta);
    let mut points = Vec::with_capacity(n + 1);
    let mut theta_lift = Vec::with_capacity(n + 1);
    points.push(p0);
    theta_lift.push(p0.theta);
    let mut winding: i64 = 0;
    let mut p = p0;
    for _ in 0..n {
        let q = step(sys, p);
        let d = q.theta - p.theta;
        if d < -0.5 {
            winding += 1;
        } else if d > 0.5 {
            winding -= 1;
        }
        points.push(q);
        theta_lift.push(winding as f64 + q.theta);
        p = q;
    }
    Ok(Trajectory { points, theta_lift })
}

/// Piecewise-linear interpolation of the lifted slow coordinate at slow time
/// `t`, i.e. between steps `floor(t / eps)` and the next one.
pub fn theta_process(traj: &Trajectory, t: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("theta process needs eps > 0".into()));
    }
    if t < 0.0 {
        return Err(Error::OutOfRange {
            what: "time must be non-negative",
            value: t,
        });
    }
    let s = t / epsilon;
    let k = s.floor() as usize;
    let frac = s - k as f64;
    if k + 1 >= traj.theta_lift.len() {
        if k + 1 == traj.theta_lift.len() && frac == 0.0 {
            return Ok(traj.theta_lift[k]);
        }
        return Err(Error::OutOfRange {
            what: "time beyond the end of the trajectory",
            value: t,
        });
    }
    let (a, b) = (traj.theta_lift[k], traj.theta_lift[k + 1]);
    Ok(a + frac * (b - a))
}

/// `sin(2 pi theta)` helper used by tests and diagnostics.
pub fn sin_turn(theta: f64) -> f64 {
    (2.0 * PI * theta).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_reduction() {
        assert_eq!(TorusAngle::new(1.25).value(), 0.25);
        assert_eq!(TorusAngle::new(-0.25).value(), 0.75);
        assert_eq!(TorusAngle::new(-1e-20).value(), 0.0);
        assert_eq!(TorusAngle::new(3.0).value(), 0.0);
        assert!((TorusAngle::new(0.95).delta_from(TorusAngle::new(0.05)) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn strict_constructor_rejects_weak_expansion() {
        assert!(ExampleFamily::new(2, 0.05, 0.1, 1e-3).is_err());
        assert!(ExampleFamily::new(2, 0.05, 0.05, 1e-3).is_ok());
        assert!(ExampleFamily::covering(2, 0.05, 0.1, 1e-3).is_ok());
        assert!(ExampleFamily::covering(1, 0.05, 0.1, 1e-3).is_err());
        assert!(ExampleFamily::covering(2, 0.05, 0.0, 1e-3).is_err());
        assert!(ExampleFamily::covering(2, 0.05, 0.1, 0.2).is_err());
    }

    #[test]
    fn fast_path_matches_generic() {
        let sys = ExampleFamily::covering(2, 0.05, 0.1, 1e-3).unwrap();
        for k in 0..200 {
            let (x, t) = ((k as f64 * 0.6180339887).fract(), (k as f64 * 0.4142135).fract());
            let (a, b) = sys.lift_and_omega(x, t);
            assert!((a - sys.lift(x, t)).abs() < 1e-14);
            assert!((b - sys.omega(x, t)).abs() < 1e-15);
            assert!((sys.dfdx(x, t) - sys.partials(x, t).fx).abs() < 1e-13);
        }
    }

    #[test]
    fn iterate_keeps_lift_consistent() {
        let sys = ExampleFamily::covering(2, 0.05, 0.1, 0.05).unwrap().with_omega_shift(0.3);
        let tr = iterate(&sys, PhasePoint::new(0.123, 0.9), 20_000).unwrap();
        assert_eq!(tr.len(), 20_001);
        for k in 0..tr.len() - 1 {
            assert_eq!(tr.points[k + 1], step(&sys, tr.points[k]));
            assert!((reduce(tr.theta_lift[k]) - tr.points[k].theta).abs() < 1e-12);
            assert!((tr.theta_lift[k + 1] - tr.theta_lift[k]).abs() <= 0.05 * 1.3 + 1e-12);
        }
        assert!(tr.theta_lift.last().unwrap() > &1.0);
    }

    #[test]
    fn skew_zero_epsilon_keeps_theta() {
        let sys = SkewProduct::new(2, 1.0, -1.0, 0.0, 0.0).unwrap();
        let tr = iterate(&sys, PhasePoint::new(0.3, 0.4), 100).unwrap();
        assert!(tr.points.iter().all(|p| p.theta == 0.4));
    }

    #[test]
    fn theta_process_interpolates() {
        let sys = SkewProduct::new(2, 0.0, 0.0, 1.0, 0.01).unwrap();
        let tr = iterate(&sys, PhasePoint::new(0.3, 0.0), 300).unwrap();
        let v = theta_process(&tr, 1.555, 0.01).unwrap();
        assert!((v - 1.555).abs() < 1e-10);
        assert!(theta_process(&tr, 3.5, 0.01).is_err());
        assert!(theta_process(&tr, 1.0, 0.0).is_err());
    }

    #[test]
    fn custom_system_validation() {
        let fields = CustomFields {
            f: Arc::new(|x, t| 2.0 * x + 0.05 * sin_turn(t) * sin_turn(x)),
            fx: Arc::new(|x, t| 2.0 + 0.05 * TAU * sin_turn(t) * (TAU * x).cos()),
            ftheta: Arc::new(|x, t| 0.05 * TAU * (TAU * t).cos() * sin_turn(x)),
            omega: Arc::new(|x, _| (TAU * x).cos()),
            wx: Arc::new(|x, _| -TAU * sin_turn(x)),
            wtheta: Arc::new(|_, _| 0.0),
        };
        let sys = CustomSystem::new(2, 1e-3, fields).unwrap();
        assert!(sys.validate_derivatives(16, 1e-6).is_ok());
        assert!(sys.lambda_min() > 1.6);

        let bad = CustomFields {
            f: Arc::new(|x, _| 2.0 * x),
            fx: Arc::new(|_, _| 2.0),
            ftheta: Arc::new(|_, _| 0.0),
            omega: Arc::new(|x, _| (TAU * x).cos()),
            wx: Arc::new(|_, _| 0.0),
            wtheta: Arc::new(|_, _| 0.0),
        };
        let sys = CustomSystem::new(2, 1e-3, bad).unwrap();
        assert!(sys.validate_derivatives(8, 1e-6).is_err());
    }

    #[test]
    fn dithered_doubling_does_not_collapse() {
        use rand::SeedableRng;
        let sys = SkewProduct::new(2, 1.0, 0.0, 0.0, 0.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut s = LiftedState::new(0.3, 0.0);
        let mut sum = 0.0;
        let n = 200_000;
        for _ in 0..n {
            s.advance_dithered(&sys, &mut rng);
            sum += s.x;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);

        let mut s = LiftedState::new(0.3, 0.0);
        for _ in 0..80 {
            s.advance(&sys);
        }
        assert_eq!(s.x, 0.0);
    }
}
