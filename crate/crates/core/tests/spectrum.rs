use std::f64::consts::FRAC_PI_2;

use dichotomy_core::spectrum::{count_roots_rectangle, root_report, spectral_gap};
use dichotomy_core::system::{AutonomousSystem, Mat};
use num_complex::Complex64;
use proptest::prelude::*;

/// Independent scalar Newton iteration for `s + a e^{-s r} = 0`.
fn scalar_root(a: f64, r: f64, s0: Complex64) -> Complex64 {
    let mut s = s0;
    for _ in 0..60 {
        let e = (-s * r).exp();
        let f = s + a * e;
        let fp = 1.0 - a * r * e;
        let step = f / fp;
        s -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    s
}

fn delayed(a: f64) -> AutonomousSystem {
    AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, a]).unwrap()
}

#[test]
fn unit_delay_dominant_pair() {
    let oracle = scalar_root(1.0, 1.0, Complex64::new(-0.3, 1.3));
    assert!((oracle.re + 0.3181).abs() < 1e-4 && (oracle.im - 1.3372).abs() < 1e-4);
    let report = root_report(&delayed(-1.0)).unwrap();
    assert!(report.hyperbolic);
    let top = report
        .roots
        .iter()
        .map(|r| r.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let dominant: Vec<_> = report.roots.iter().filter(|r| (r.re - top).abs() < 1e-9).collect();
    assert_eq!(dominant.len(), 2);
    for r in dominant {
        assert!((r.re - oracle.re).abs() < 1e-6);
        assert!((r.im.abs() - oracle.im).abs() < 1e-6);
    }
}

#[test]
fn quarter_period_delay_has_an_axis_root() {
    let report = root_report(&delayed(-FRAC_PI_2)).unwrap();
    assert!(!report.hyperbolic);
    assert!((report.axis_argmin.abs() - FRAC_PI_2).abs() < 1e-6, "{}", report.axis_argmin);
    assert!(spectral_gap(&delayed(-FRAC_PI_2)).is_err());
}

#[test]
fn roots_come_in_conjugate_pairs() {
    let report = root_report(&delayed(-1.2)).unwrap();
    for r in &report.roots {
        assert!(report
            .roots
            .iter()
            .any(|q| (q.re - r.re).abs() < 1e-8 && (q.im + r.im).abs() < 1e-8));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn diagonal_ode_counts(eigs in prop::collection::vec(prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], 1..4)) {
        let n = eigs.len();
        let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(eigs.clone()));
        let sys = AutonomousSystem::new(vec![0.0], vec![a]).unwrap();
        let right = eigs.iter().filter(|&&e| e > 0.0).count() as i64;
        prop_assert_eq!(count_roots_rectangle(&sys, (-5.0, 5.0), (-1.0, 1.0)).unwrap(), n as i64);
        prop_assert_eq!(count_roots_rectangle(&sys, (0.05, 5.0), (-1.0, 1.0)).unwrap(), right);
        let dist = eigs.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        let gap = spectral_gap(&sys).unwrap();
        prop_assert!((gap - (0.9 * dist).min(0.9)).abs() < 1e-6);
    }

    #[test]
    fn hayes_stable_range(a in 0.1f64..1.5) {
        // x' = -a x(t - 1) is stable for 0 < a < π/2.
        let report = root_report(&delayed(-a)).unwrap();
        prop_assert!(report.hyperbolic);
        prop_assert!(report.roots.iter().all(|r| r.re < 0.0));
    }
}
