use std::f64::consts::{PI, TAU};

use fastslow::averaged::*;
use fastslow::systems::ExampleFamily;
use fastslow::transfer::{slow_fields, GkTerms, SlowFields};
use proptest::prelude::*;

fn sine_sink(m: usize) -> SlowFields {
    SlowFields::from_functions(m, |t| -(TAU * t).sin(), |t| -TAU * (TAU * t).cos(), |_| 0.5)
}

/// Exact flow of `theta' = -sin 2 pi theta`: `tan(pi theta)` decays like
/// `exp(-2 pi t)`.
fn sine_flow(theta0: f64, t: f64) -> f64 {
    ((PI * theta0).tan() * (-TAU * t).exp()).atan() / PI
}

fn example_fields() -> SlowFields {
    slow_fields(&ExampleFamily::covering(2, 0.05, 0.1, 1e-3).unwrap(), 128, 2048, GkTerms::Auto).unwrap()
}

#[test]
fn constant_drift_rotates_linearly() {
    let f = SlowFields::from_functions(64, |_| 0.7, |_| 0.0, |_| 1.0);
    let sol = solve_averaged(&f, 0.2, 3.0, 1e-3).unwrap();
    assert!((sol.final_value() - (0.2 + 2.1)).abs() < 1e-10);
}

#[test]
fn start_at_zero_stays_put() {
    let sol = solve_averaged(&sine_sink(256), 0.5, 2.0, 1e-3).unwrap();
    assert!(sol.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn rk4_matches_exact_flow_at_fourth_order() {
    // coarse and fine grids share m = 4096 so only the step changes
    let f = sine_sink(4096);
    let err = |h: f64| (solve_averaged(&f, 0.3, 1.0, h).unwrap().final_value() - sine_flow(0.3, 1.0)).abs();
    let (a, b) = (err(1e-2), err(5e-3));
    assert!(a < 1e-6);
    assert!(a / b >= 8.0 || b < 1e-12, "{a} {b}");
}

#[test]
fn sine_zero_set() {
    let z = find_zeros(&sine_sink(256)).unwrap();
    assert_eq!(z.zeros.len(), 2);
    let s: Vec<&Zero> = z.stable().collect();
    let u: Vec<&Zero> = z.unstable().collect();
    assert!(s[0].theta.min(1.0 - s[0].theta) < 1e-6 && (s[0].slope + TAU).abs() < 1e-3);
    assert!((u[0].theta - 0.5).abs() < 1e-6 && (u[0].slope - TAU).abs() < 1e-3);
    assert!(!find_zeros(&SlowFields::from_functions(64, |_| 1.0, |_| 0.0, |_| 1.0)).unwrap().zeros.iter().any(|_| true));
}

#[test]
fn classification_survives_refinement() {
    let drift = |t: f64| -(2.0 * TAU * t).sin() + 0.3 * (TAU * t).cos();
    let d1 = |t: f64| -2.0 * TAU * (2.0 * TAU * t).cos() - 0.3 * TAU * (TAU * t).sin();
    let a = find_zeros(&SlowFields::from_functions(128, drift, d1, |_| 1.0)).unwrap();
    let b = find_zeros(&SlowFields::from_functions(256, drift, d1, |_| 1.0)).unwrap();
    assert_eq!(a.zeros.len(), b.zeros.len());
    for (x, y) in a.zeros.iter().zip(&b.zeros) {
        assert_eq!(x.kind, y.kind);
        assert!((x.theta - y.theta).abs() < 1e-4);
    }
}

#[test]
fn example_family_has_a_single_sink_at_zero() {
    let f = example_fields();
    let z = find_zeros(&f).unwrap();
    let sinks: Vec<&Zero> = z.stable().collect();
    assert_eq!(sinks.len(), 1);
    assert!(sinks[0].theta.min(1.0 - sinks[0].theta) < 1e-6);
    let exact = -2.0 * PI * PI * 0.1;
    assert!((sinks[0].slope / exact - 1.0).abs() < 0.02);

    // decay from 0.1 is monotone with rate omega_bar'(0)
    let sol = solve_averaged(&f, 0.1, 5.0, 1e-3).unwrap();
    assert!(sol.values.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
    let (t1, t2) = (3.0, 5.0);
    let rate = (sol.at(&f.interp(), t2).ln() - sol.at(&f.interp(), t1).ln()) / (t2 - t1);
    assert!((rate / exact - 1.0).abs() < 0.05, "{rate} vs {exact}");

    // Ornstein-Uhlenbeck limit at the sink: (1/2) / (2 * 2 pi^2 beta)
    let sol0 = solve_averaged(&f, 0.0, 6.0, 1e-3).unwrap();
    let v = variance_curve(&f, &sol0).final_value();
    let ou = 1.0 / (8.0 * PI * PI * 0.1);
    assert!((v / ou - 1.0).abs() < 0.02, "{v} vs {ou}");
}

#[test]
fn flat_drift_variance_grows_linearly() {
    let f = SlowFields::from_functions(64, |_| 0.3, |_| 0.0, |_| 0.8);
    let sol = solve_averaged(&f, 0.0, 2.5, 1e-3).unwrap();
    let v = variance_curve(&f, &sol);
    for t in [0.5, 1.0, 2.5] {
        assert!((v.at(t) - 0.8 * t).abs() < 1e-9);
    }
}

#[test]
fn ou_variance_at_sine_sink() {
    let f = sine_sink(256);
    let z = find_zeros(&f).unwrap();
    let sink = *z.stable().next().unwrap();
    let limit = ou_variance(&f, &sink);
    assert!((limit - 0.5 / (2.0 * TAU)).abs() < 1e-4);
    let sol = solve_averaged(&f, 0.0, 4.0, 1e-3).unwrap();
    assert!((variance_curve(&f, &sol).final_value() / limit - 1.0).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_starts_reach_their_sink(theta0 in 0.0f64..1.0) {
        let f = SlowFields::from_functions(
            256,
            |t| -(2.0 * TAU * t).sin() / TAU,
            |t| -2.0 * (2.0 * TAU * t).cos(),
            |_| 0.5,
        );
        let z = find_zeros(&f).unwrap();
        prop_assume!(z.unstable().all(|u| (theta0 - u.theta).abs() > 1e-3));
        let sol = solve_averaged(&f, theta0, 12.0, 1e-2).unwrap();
        let end = fastslow::systems::reduce(sol.final_value());
        let k = z.basin_of(theta0).unwrap();
        let target = z.zeros[k].theta;
        let d = (end - target).abs();
        prop_assert!(d.min(1.0 - d) < 1e-3, "start {} ended at {} not {}", theta0, end, target);
    }

    #[test]
    fn variance_is_positive(theta0 in 0.0f64..1.0, t in 0.01f64..3.0) {
        let f = SlowFields::from_functions(128, |x| (TAU * x).cos(), |x| -TAU * (TAU * x).sin(), |x| 0.2 + 0.1 * (TAU * x).sin());
        let sol = solve_averaged(&f, theta0, t, 1e-3).unwrap();
        prop_assert!(variance_curve(&f, &sol).final_value() > 0.0);
    }
}
