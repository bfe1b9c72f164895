use std::f64::consts::{PI, TAU};

use fastslow::averaged::find_zeros;
use fastslow::lyapunov::*;
use fastslow::systems::{ExampleFamily, FastSlowSystem, PhasePoint, SkewProduct};
use fastslow::transfer::SlowFields;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct series for the eps = 0 center slope of the example family, written
/// out from the formulas for f and its partials.
fn series_oracle(ell: f64, alpha: f64, beta: f64, x: f64, theta: f64, terms: usize) -> f64 {
    let st = (TAU * theta).sin();
    let ct = (TAU * theta).cos();
    let mut y = x;
    let mut prod = 1.0;
    let mut s = 0.0;
    for _ in 0..terms {
        let fx = ell + st * TAU * (alpha * (TAU * y).cos() + beta * ell * (TAU * ell * y).cos());
        let ft = TAU * ct * (alpha * (TAU * y).sin() + beta * (TAU * ell * y).sin());
        prod *= fx;
        s -= ft / prod;
        y = (ell * y + st * (alpha * (TAU * y).sin() + beta * (TAU * ell * y).sin())).rem_euclid(1.0);
    }
    s
}

fn geometry_family(eps: f64) -> ExampleFamily {
    ExampleFamily::new(3, 0.05, 0.05, eps).unwrap()
}

#[test]
fn zero_epsilon_field_matches_series() {
    let sys = geometry_family(0.0);
    let cf = center_field(&sys, 256, 64, 1e-12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, t) = (rng.random::<f64>(), rng.random::<f64>());
        let oracle = series_oracle(3.0, 0.05, 0.05, x, t, 40);
        worst = worst.max((cf.slope_at(&sys, PhasePoint::new(x, t)) - oracle).abs());
    }
    assert!(worst < 1e-6, "worst deviation {worst}");
}

#[test]
fn certificate_and_residual() {
    let sys = geometry_family(1e-3);
    let cf = center_field(&sys, 256, 64, 1e-10).unwrap();
    assert!(cf.sigma < 1.0);
    assert!(cf.sigma <= 1.0 / sys.lambda_min() + 10.0 * 1e-3, "sigma {}", cf.sigma);
    assert!(cf.measured_ratio <= cf.sigma + 1e-6);
    assert!(cf.residual <= 1e-8);
    assert!(cf.values.iter().all(|v| v.abs() <= cf.k_radius + 1e-12));
    let h0 = cf.history[0];
    for (k, h) in cf.history.iter().enumerate() {
        assert!(*h <= cf.sigma.powi(k as i32) * h0 * (1.0 + 1e-9) + 1e-15, "sweep {k}");
    }
}

#[test]
fn refinement_is_stable() {
    let sys = geometry_family(1e-3);
    let coarse = center_field(&sys, 256, 64, 1e-11).unwrap();
    let fine = center_field(&sys, 512, 64, 1e-11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = PhasePoint::new(rng.random(), rng.random());
        assert!((coarse.slope_at(&sys, p) - fine.slope_at(&sys, p)).abs() <= 1e-4);
    }
}

#[test]
fn field_is_invariant_under_the_map() {
    // s(F p) = (f_x s(p) + f_theta) / (1 + eps (w_x s(p) + w_theta))
    let sys = geometry_family(2e-3);
    let cf = center_field(&sys, 256, 64, 1e-11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let p = PhasePoint::new(rng.random(), rng.random());
        let s = cf.slope_at(&sys, p);
        let q = sys.partials(p.x, p.theta);
        let pushed = (q.fx * s + q.ftheta) / (1.0 + 2e-3 * (q.wx * s + q.wtheta));
        let img = fastslow::systems::step(&sys, p);
        assert!((cf.slope_at(&sys, img) - pushed).abs() < 1e-8);
    }
}

#[test]
fn non_expanding_family_fails_loudly() {
    let sys = ExampleFamily::covering(2, 0.05, 0.1, 1e-3).unwrap();
    assert!(center_field(&sys, 64, 32, 1e-10).is_err());
}

#[test]
fn zero_epsilon_exponent_vanishes() {
    let sys = geometry_family(0.0);
    let est = chi_c_orbit(&sys, None, PhasePoint::new(0.2, 0.3), 100_000, &OrbitOptions::default()).unwrap();
    assert_eq!(est.chi_c, 0.0);
    assert!(est.chi_c_over_eps.is_none());
}

#[test]
fn short_orbits_rejected() {
    let sys = geometry_family(1e-3);
    assert!(chi_c_orbit(&sys, None, PhasePoint::new(0.2, 0.3), 1000, &OrbitOptions::default()).is_err());
}

#[test]
fn skew_exponent_is_negative() {
    let sys = SkewProduct::new(2, 1.0, -1.0, 0.0, 1e-3).unwrap();
    let opts = OrbitOptions { block: 50_000, ..Default::default() };
    let est = chi_c_orbit(&sys, None, PhasePoint::new(0.3, 0.0), 2_000_000, &opts).unwrap();
    assert!(est.chi_c < 0.0);
    let v = est.chi_c_over_eps.unwrap();
    assert!((v / -TAU - 1.0).abs() < 0.1, "{v}");
}

#[test]
fn skew_formula_and_a3() {
    let sys = SkewProduct::new(2, 1.0, -1.0, 0.0, 1e-3).unwrap();
    let fields = SlowFields::from_functions(64, |t| -(TAU * t).sin(), |t| -TAU * (TAU * t).cos(), |_| 0.5);
    let zeros = find_zeros(&fields).unwrap();
    let formula = chi_c_formula(&sys, &zeros, &[1.0], 1024).unwrap();
    assert!((formula + TAU).abs() < 1e-9, "{formula}");
    let a3 = a3_check(&sys, &zeros, 1024).unwrap();
    assert!(a3.mostly_contracting);
    let cf = center_field(&sys, 64, 16, 1e-12).unwrap();
    let psi = psi_star_field(&sys, &cf);
    for (k, v) in psi.iter().enumerate() {
        let p = cf.node(k % 64, k / 64);
        assert!((v + TAU * (TAU * p.theta).cos()).abs() < 1e-12);
    }
    assert!(chi_c_formula(&sys, &zeros, &[0.5], 1024).is_err());
}

#[test]
fn theta_independent_data_gives_zero() {
    let sys = SkewProduct::new(2, 1.0, 0.0, 0.0, 1e-3).unwrap();
    let st = psi_bar_star_fiber(&sys, 0.3, 512).unwrap();
    assert_eq!(st.mean_wtheta, 0.0);
    assert_eq!(st.center_term, 0.0);
    let constant = SkewProduct::new(2, 0.0, 0.0, 0.7, 1e-3).unwrap();
    let cf = center_field(&constant, 32, 8, 1e-12).unwrap();
    assert!(psi_star_field(&constant, &cf).iter().all(|v| *v == 0.0));
}

#[test]
fn example_center_term_by_fourier_orthogonality() {
    // only the k = 0 term survives: 2 pi^2 alpha / l
    for (ell, alpha, beta) in [(2u32, 0.05, 0.1), (3, 0.05, 0.05), (2, 0.1, 0.02)] {
        let sys = ExampleFamily::covering(ell, alpha, beta, 1e-3).unwrap();
        let st = psi_bar_star_fiber(&sys, 0.0, 2048).unwrap();
        let exact = 2.0 * PI * PI * alpha / ell as f64;
        assert!((st.psi_bar - exact).abs() < 1e-6, "l={ell}: {} vs {exact}", st.psi_bar);
    }
}

#[test]
fn example_orbit_matches_formula() {
    let sys = ExampleFamily::covering(2, 0.05, 0.1, 1e-3).unwrap();
    let opts = OrbitOptions { block: 50_000, ..Default::default() };
    let est = chi_c_orbit(&sys, None, PhasePoint::new(0.3, 0.0), 2_000_000, &opts).unwrap();
    let orbit = est.chi_c_over_eps.unwrap();
    let formula = PI * PI * 0.05;
    let tol = (3.0 * est.stderr / 1e-3).max(0.1);
    assert!((orbit - formula).abs() < tol, "{orbit} vs {formula}");
    assert!(orbit > 0.0);
}

#[test]
fn orbits_agree_across_seeds() {
    let sys = ExampleFamily::covering(2, 0.05, 0.1, 1e-3).unwrap();
    let opts = OrbitOptions {
        n_orbits: 10,
        seed: 5,
        block: 20_000,
        lookahead: 80,
    };
    let est = chi_c_orbit(&sys, None, PhasePoint::new(0.3, 0.05), 200_000, &opts).unwrap();
    let per_orbit = est.stderr * (opts.n_orbits as f64).sqrt();
    for m in &est.orbit_means {
        assert!((m - est.chi_c).abs() <= 3.0 * per_orbit, "{m} vs {}", est.chi_c);
    }
}

#[test]
fn grid_seed_and_plain_recursion_agree() {
    let sys = geometry_family(1e-3);
    let cf = center_field(&sys, 128, 32, 1e-11).unwrap();
    let opts = OrbitOptions { lookahead: 10, ..Default::default() };
    let p = PhasePoint::new(0.4, 0.2);
    let a = chi_c_orbit(&sys, Some(&cf), p, 200_000, &opts).unwrap();
    let b = chi_c_orbit(&sys, None, p, 200_000, &OrbitOptions::default()).unwrap();
    assert!((a.chi_c - b.chi_c).abs() < 1e-9, "{} {}", a.chi_c, b.chi_c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn slope_stays_in_invariant_interval(x in 0.0f64..1.0, t in 0.0f64..1.0, alpha in 0.0f64..0.06, beta in 0.0f64..0.06) {
        let sys = ExampleFamily::new(3, alpha, beta, 1e-3).unwrap();
        let cf = center_field(&sys, 64, 16, 1e-10).unwrap();
        prop_assert!(cf.slope_at(&sys, PhasePoint::new(x, t)).abs() <= cf.k_radius + 1e-9);
    }
}
