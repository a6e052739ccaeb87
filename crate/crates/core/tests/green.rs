use dichotomy_core::green::{green_autonomous, GreenOptions};
use dichotomy_core::spectrum::spectral_gap;
use dichotomy_core::system::{AutonomousSystem, Mat, UniformGrid};

fn ode(a: f64) -> AutonomousSystem {
    AutonomousSystem::scalar(&[0.0], &[a]).unwrap()
}

fn kernel(sys: &AutonomousSystem, a0: f64, lo: f64, hi: f64) -> dichotomy_core::green::GreenKernel {
    let grid = UniformGrid::new(lo, hi, 1.0 / 64.0).unwrap();
    green_autonomous(sys, a0, &grid, GreenOptions::default()).unwrap()
}

fn systems() -> Vec<AutonomousSystem> {
    vec![
        ode(-1.0),
        AutonomousSystem::new(vec![0.0], vec![Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])]).unwrap(),
        AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -1.0]).unwrap(),
        AutonomousSystem::scalar(&[0.0, 0.5, 1.5], &[-0.4, 0.2, -0.3]).unwrap(),
        AutonomousSystem::new(
            vec![0.0, 1.0],
            vec![
                Mat::from_row_slice(2, 2, &[-2.0, 0.5, 0.0, 1.0]),
                Mat::from_row_slice(2, 2, &[0.3, 0.0, 0.2, -0.4]),
            ],
        )
        .unwrap(),
    ]
}

#[test]
fn scalar_odes_reproduce_the_exponential() {
    for a in [-1.0, -2.0] {
        let sys = ode(a);
        let k = kernel(&sys, spectral_gap(&sys).unwrap(), -5.0, 10.0);
        let grid = k.grid;
        let worst = grid
            .nodes()
            .zip(&k.samples)
            .map(|(t, g)| (g[(0, 0)] - if t >= 0.0 { (a * t).exp() } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "A0 = {a}: {worst}");
    }
}

#[test]
fn unit_jump_at_the_origin() {
    for sys in systems() {
        let k = kernel(&sys, spectral_gap(&sys).unwrap(), -10.0, 20.0);
        let n = sys.dim();
        let jump = k.eval_side(0.0, dichotomy_core::system::Side::Right)
            - k.eval_side(0.0, dichotomy_core::system::Side::Left);
        assert!((jump - Mat::identity(n, n)).amax() < 1e-6);
        assert!(k.jump_error < 1e-6);
    }
}

#[test]
fn independent_of_the_contour_abscissa() {
    let sys = AutonomousSystem::scalar(&[0.0, 1.0], &[-0.5, -0.4]).unwrap();
    let gap = spectral_gap(&sys).unwrap();
    let a = kernel(&sys, gap, -5.0, 15.0);
    let b = kernel(&sys, 0.5 * gap, -5.0, 15.0);
    let diff = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn method_of_steps_series_for_a_scaled_delay() {
    // G₀ of x' = a x(t - 1) is Σ_j a^j (t - j)^j / j! over j <= t.
    let a = -0.5;
    let sys = AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, a]).unwrap();
    let k = kernel(&sys, spectral_gap(&sys).unwrap(), -5.0, 30.0);
    let exact = |t: f64| {
        if t < 0.0 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut fact = 1.0;
        for j in 0..=(t.floor() as i32) {
            if j > 0 {
                fact *= j as f64;
            }
            sum += a.powi(j) * (t - j as f64).powi(j) / fact;
        }
        sum
    };
    let worst = k
        .grid
        .nodes()
        .zip(&k.samples)
        .filter(|(t, _)| *t <= 8.0)
        .map(|(t, g)| (g[(0, 0)] - exact(t)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn fitted_rate_tracks_the_dominant_root() {
    let cases = [
        (ode(-2.0), 2.0),
        (AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -1.0]).unwrap(), 0.318_131_505_2),
    ];
    for (sys, dist) in cases {
        let k = kernel(&sys, spectral_gap(&sys).unwrap(), -10.0, 40.0);
        assert!((k.fit_a - dist).abs() <= 0.1 * dist, "fit {} vs root {dist}", k.fit_a);
    }
}
