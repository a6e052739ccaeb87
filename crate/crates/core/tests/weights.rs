use dichotomy_core::system::{k_rate, omega, shift_factor, weight_eval, ShiftSign};
use proptest::prelude::*;

#[test]
fn closed_form_values() {
    assert_eq!(weight_eval(0.0).unwrap(), (1.0, 0.0));
    assert_eq!(weight_eval(1.0).unwrap(), (0.5, -1.0));
    let (w, k) = weight_eval(2.0).unwrap();
    assert!((w - 0.2).abs() < 1e-16 && (k + 0.8).abs() < 1e-16);
    assert!(weight_eval(f64::NAN).is_err());
    assert!(weight_eval(f64::INFINITY).is_err());
}

proptest! {
    #[test]
    fn omega_is_a_probability_like_weight(t in -1e6f64..1e6) {
        let w = omega(t);
        prop_assert!(w > 0.0 && w <= 1.0);
    }

    #[test]
    fn derivative_matches_rate(t in -1e6f64..1e6) {
        let h = 1e-4;
        let fd = (omega(t + h) - omega(t - h)) / (2.0 * h);
        prop_assert!((fd - k_rate(t) * omega(t)).abs() <= 1e-8);
    }

    #[test]
    fn shifted_weight_factorises(t in -1e6f64..1e6, r in 0.0f64..20.0) {
        for (sign, u) in [(ShiftSign::Plus, t + r), (ShiftSign::Minus, t - r)] {
            let lhs = omega(u);
            let rhs = shift_factor(t, r, sign) * omega(t);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs);
        }
    }

    #[test]
    fn forward_and_backward_shifts_invert(t in -1e3f64..1e3, r in 0.0f64..20.0) {
        let round_trip = shift_factor(t, r, ShiftSign::Plus) * shift_factor(t + r, r, ShiftSign::Minus);
        prop_assert!((round_trip - 1.0).abs() <= 1e-12);
    }
}
