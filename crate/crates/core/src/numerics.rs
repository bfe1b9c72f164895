//! Small numerical building blocks shared by the modules: a periodic cubic
//! spline, log-space helpers and one-sample goodness-of-fit statistics.

use statrs::function::erf::erfc;

/// Interpolating cubic spline on the uniform periodic grid `i / m`, `i = 0..m`.
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    y: Vec<f64>,
    m2: Vec<f64>,
    h: f64,
}

impl PeriodicSpline {
    /// Build from samples at `theta_i = i / m`. Needs at least three samples.
    pub fn new(values: &[f64]) -> Self {
        let m = values.len();
        assert!(m >= 3, "periodic spline needs at least three nodes");
        let h = 1.0 / m as f64;
        let rhs: Vec<f64> = (0..m)
            .map(|i| {
                let prev = values[(i + m - 1) % m];
                let next = values[(i + 1) % m];
                6.0 * (next - 2.0 * values[i] + prev) / (h * h)
            })
            .collect();
        let m2 = solve_cyclic(1.0, 4.0, 1.0, &rhs);
        Self {
            y: values.to_vec(),
            m2,
            h,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    fn locate(&self, theta: f64) -> (usize, usize, f64, f64) {
        let m = self.y.len();
        let u = theta - theta.floor();
        let pos = u * m as f64;
        let mut i = pos.floor() as usize;
        if i >= m {
            i = m - 1;
        }
        let a = pos - i as f64; // distance from left node in units of h
        (i, (i + 1) % m, a, 1.0 - a)
    }

    /// Spline value at an angle (reduced mod 1).
    #[inline]
    pub fn eval(&self, theta: f64) -> f64 {
        let (i, j, a, b) = self.locate(theta);
        let h2 = self.h * self.h;
        self.m2[i] * b * b * b * h2 / 6.0
            + self.m2[j] * a * a * a * h2 / 6.0
            + (self.y[i] - self.m2[i] * h2 / 6.0) * b
            + (self.y[j] - self.m2[j] * h2 / 6.0) * a
    }

    #[inline]
    pub fn deriv(&self, theta: f64) -> f64 {
        let (i, j, a, b) = self.locate(theta);
        let h = self.h;
        -self.m2[i] * b * b * h / 2.0 + self.m2[j] * a * a * h / 2.0 + (self.y[j] - self.y[i]) / h
            - (self.m2[j] - self.m2[i]) * h / 6.0
    }

    #[inline]
    pub fn deriv2(&self, theta: f64) -> f64 {
        let (i, j, a, b) = self.locate(theta);
        self.m2[i] * b + self.m2[j] * a
    }

    /// Value, first and second derivative in one lookup.
    #[inline]
    pub fn eval_all(&self, theta: f64) -> (f64, f64, f64) {
        (self.eval(theta), self.deriv(theta), self.deriv2(theta))
    }
}

/// Solve the constant-coefficient cyclic tridiagonal system
/// `lo * x[i-1] + diag * x[i] + up * x[i+1] = rhs[i]` (indices mod n)
/// with Sherman-Morrison on top of the Thomas algorithm.
fn solve_cyclic(lo: f64, diag: f64, up: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -diag;
    let mut b = vec![diag; n];
    b[0] = diag - gamma;
    b[n - 1] = diag - lo * up / gamma;
    let x = thomas(lo, &b, up, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = lo;
    let z = thomas(lo, &b, up, &u);
    let fact = (x[0] + up * x[n - 1] / gamma) / (1.0 + z[0] + up * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn thomas(lo: f64, diag: &[f64], up: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lo * c[i - 1];
        c[i] = up / den;
        d[i] = (rhs[i] - lo * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log((exp(d) - 1) / d)`, the log of the mean of `exp` over a unit cell
/// whose exponent rises linearly by `d`.
#[inline]
pub fn log_exprel(d: f64) -> f64 {
    if d.abs() < 1e-8 {
        d / 2.0
    } else if d > 30.0 {
        d + (-(-d).exp()).ln_1p() - d.ln()
    } else {
        (d.exp_m1() / d).ln()
    }
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic KS critical value `c(alpha) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    ((-0.5 * (alpha / 2.0).ln()).sqrt()) / (n as f64).sqrt()
}

/// Mean and standard error from batch means.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Wrap a real number into `[-1/2, 1/2)`.
#[inline]
pub fn wrap_half(d: f64) -> f64 {
    d - (d + 0.5).floor()
}
