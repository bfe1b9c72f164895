use fastslow::systems::*;
use proptest::prelude::*;

fn example(eps: f64) -> ExampleFamily {
    ExampleFamily::covering(2, 0.05, 0.1, eps).unwrap()
}

#[test]
fn origin_steps_straight_up() {
    let q = step(&example(1e-3), PhasePoint::new(0.0, 0.0));
    assert_eq!(q.x, 0.0);
    assert!((q.theta - 1e-3).abs() < 1e-18);
}

#[test]
fn zero_epsilon_freezes_theta() {
    let sys = example(0.0);
    let t = iterate(&sys, PhasePoint::new(0.123, 0.77), 500).unwrap();
    assert!(t.points.iter().all(|p| p.theta == 0.77));
    assert!(t.theta_lift.iter().all(|v| *v == 0.77));
}

#[test]
fn step_matches_closed_form() {
    // 2 pi * 0.3 = 108 degrees and 4 pi * 0.3 = 216 degrees, so every
    // trigonometric value has an exact surd form
    let s5 = 5f64.sqrt();
    let sin108 = (10.0 + 2.0 * s5).sqrt() / 4.0;
    let sin216 = -(10.0 - 2.0 * s5).sqrt() / 4.0;
    let cos108 = -(s5 - 1.0) / 4.0;
    let x = 0.6 + (0.05 * sin108 + 0.1 * sin216);
    let theta = 0.25 + 1e-3 * cos108;
    let q = step(&example(1e-3), PhasePoint::new(0.3, 0.25));
    assert!((q.x - x).abs() < 4e-16, "{} vs {x}", q.x);
    assert!((q.theta - theta).abs() < 1e-16);
}

#[test]
fn single_point_trajectory() {
    let t = iterate(&example(1e-3), PhasePoint::new(0.3, 0.25), 0).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t.theta_lift, vec![0.25]);
}

#[test]
fn trajectory_invariants() {
    let eps = 1e-3;
    let sys = example(eps);
    let n = 10_000;
    let t = iterate(&sys, PhasePoint::new(0.3, 0.25), n).unwrap();
    assert_eq!(t.len(), n + 1);
    for k in 0..n {
        assert_eq!(t.points[k + 1], step(&sys, t.points[k]));
        assert!((t.theta_lift[k + 1] - t.theta_lift[k]).abs() <= eps * sys.omega_sup() + 1e-15);
    }
    for (p, l) in t.points.iter().zip(&t.theta_lift) {
        let d = reduce(*l) - p.theta;
        assert!(d.abs() < 1e-12 || (d.abs() - 1.0).abs() < 1e-12);
    }
    assert!((t.theta_lift[n] - 0.25).abs() <= eps * n as f64);
}

#[test]
fn orbits_stay_close_to_frozen_slow_variable() {
    let eps = 1e-4;
    let n = 2000;
    let a = iterate(&example(eps), PhasePoint::new(0.3, 0.6), n).unwrap();
    let b = iterate(&example(0.0), PhasePoint::new(0.3, 0.6), n).unwrap();
    for k in 0..=n {
        assert!((a.theta_lift[k] - b.theta_lift[k]).abs() <= eps * k as f64 + 1e-15);
    }
}

#[test]
fn expansion_certificate_on_fine_grid() {
    let sys = ExampleFamily::new(3, 0.05, 0.05, 1e-3).unwrap();
    let lam = sys.lambda_min();
    assert!(lam > 1.0);
    let n = 1024;
    for i in 0..n {
        for j in 0..n {
            let d = sys.dfdx(i as f64 / n as f64, j as f64 / n as f64);
            assert!(d >= lam - 1e-12);
        }
    }
    assert!(ExampleFamily::new(2, 0.05, 0.1, 1e-3).is_err());
}

#[test]
fn trajectory_length_is_capped() {
    assert!(matches!(
        iterate(&example(1e-3), PhasePoint::new(0.1, 0.1), MAX_TRAJECTORY_LEN),
        Err(fastslow::Error::ResourceLimit { .. })
    ));
}

#[test]
fn theta_process_examples() {
    let eps = 0.1;
    let traj = Trajectory {
        points: (0..6).map(|k| PhasePoint::new(0.0, 0.1 * k as f64)).collect(),
        theta_lift: (0..6).map(|k| 0.1 * k as f64).collect(),
    };
    assert!((theta_process(&traj, 0.3, eps).unwrap() - traj.theta_lift[3]).abs() < 1e-15);
    let mid = theta_process(&traj, 0.25, eps).unwrap();
    assert!((mid - 0.5 * (traj.theta_lift[2] + traj.theta_lift[3])).abs() < 1e-15);
    assert!(theta_process(&traj, 0.55, eps).is_err());
    assert!(theta_process(&traj, -0.1, eps).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_stays_on_torus(x in 0.0f64..1.0, th in 0.0f64..1.0, eps in 0.0f64..0.05) {
        let q = step(&example(eps), PhasePoint::new(x, th));
        prop_assert!((0.0..1.0).contains(&q.x));
        prop_assert!((0.0..1.0).contains(&q.theta));
    }

    #[test]
    fn lift_tracks_circle(x in 0.0f64..1.0, th in 0.0f64..1.0, shift in 1.01f64..2.0) {
        let sys = ExampleFamily::new(3, 0.05, 0.05, 1e-2).unwrap().with_omega_shift(shift);
        let t = iterate(&sys, PhasePoint::new(x, th), 300).unwrap();
        for (p, l) in t.points.iter().zip(&t.theta_lift) {
            let d = reduce(*l) - p.theta;
            prop_assert!(d.abs() < 1e-12 || (d.abs() - 1.0).abs() < 1e-12);
        }
        // omega > 0 everywhere, so the lift increases
        prop_assert!(t.theta_lift.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn angles_reduce_into_unit_interval(v in -1e6f64..1e6) {
        let r = reduce(v);
        prop_assert!((0.0..1.0).contains(&r));
        let a = TorusAngle::new(v);
        prop_assert!((0.0..1.0).contains(&a.value()));
    }
}
