use dichotomy_core::dichotomy::{
    build_forcing, extend_history, fredholm_diagnostics, gamma0_estimate, verify_dichotomy, Direction,
    Verdict, VerifyOptions, WholeLineProblem, WholeLineSolver,
};
use dichotomy_core::evolution::HistorySegment;
use dichotomy_core::system::{AutonomousSystem, DelaySystem, Mat, PerturbationProfile};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stable_scalar() -> DelaySystem {
    DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap())
}

fn saddle() -> DelaySystem {
    let a0 = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
    DelaySystem::autonomous(&AutonomousSystem::new(vec![0.0, 1.0], vec![a0, Mat::zeros(2, 2)]).unwrap())
}

fn delayed_scalar() -> DelaySystem {
    DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -1.0]).unwrap())
}

fn perturbed_delay() -> DelaySystem {
    delayed_scalar()
        .with_perturbations(vec![
            PerturbationProfile::rational(Mat::from_element(1, 1, -0.1)),
            PerturbationProfile::zero(1),
        ])
        .unwrap()
}

fn random_history(rng: &mut ChaCha8Rng, n: usize, m: usize) -> HistorySegment {
    let values = DMatrix::from_fn(n, m + 1, |_, _| rng.gen_range(-1.0..1.0));
    HistorySegment::new(0.0, 1.0, values).unwrap()
}

#[test]
fn plateau_values_of_the_extension() {
    let phi = HistorySegment::from_fn(0.0, 1.0, 16, 1, |t| DVector::from_element(1, t)).unwrap();
    assert_eq!(extend_history(&phi, 0.0, Direction::Forward).eval(2.0)[0], 0.0);
    assert_eq!(extend_history(&phi, 0.0, Direction::Backward).eval(-5.0)[0], -1.0);
    let c = HistorySegment::constant(0.0, 1.0, 16, &DVector::from_element(1, 3.0)).unwrap();
    for dir in [Direction::Forward, Direction::Backward] {
        for t in [-7.0, -0.5, 0.0, 4.0] {
            assert_eq!(extend_history(&c, 0.0, dir).eval(t)[0], 3.0);
        }
    }
}

#[test]
fn forcing_is_bounded_by_beta() {
    let sys = perturbed_delay();
    let problem = WholeLineProblem::new(20.0, 1.0 / 32.0).unwrap();
    let grid = problem.grid();
    let beta = sys.beta(problem.half_width, problem.step);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..100 {
        let phi = random_history(&mut rng, 1, 32);
        let dir = if k % 2 == 0 { Direction::Forward } else { Direction::Backward };
        let g = build_forcing(&sys, &extend_history(&phi, 0.0, dir), &grid).unwrap();
        assert!(g.sup_norm() <= beta * phi.sup_norm() * (1.0 + 1e-12));
    }
}

#[test]
fn zero_history_gives_zero_forcing_and_projection() {
    let sys = saddle();
    let problem = WholeLineProblem::new(30.0, 1.0 / 64.0).unwrap();
    let zero = HistorySegment::constant(0.0, 1.0, 16, &DVector::zeros(2)).unwrap();
    let g = build_forcing(&sys, &extend_history(&zero, 0.0, Direction::Forward), &problem.grid()).unwrap();
    assert_eq!(g.sup_norm(), 0.0);
    let split = WholeLineSolver::new(&sys, &problem).unwrap().project(0.0, &zero).unwrap();
    assert_eq!(split.p.sup_norm(), 0.0);
    assert_eq!(split.q.sup_norm(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn splitting_is_exact(seed in 0u64..1000) {
        let sys = saddle();
        let problem = WholeLineProblem::new(30.0, 1.0 / 64.0).unwrap();
        let solver = WholeLineSolver::new(&sys, &problem).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_history(&mut rng, 2, 64);
        let split = solver.project(0.0, &phi).unwrap();
        let sum = split.p.add(&split.q).unwrap();
        prop_assert_eq!(sum.values(), phi.values());
    }
}

#[test]
fn delayed_projector_is_identity() {
    let sys = delayed_scalar();
    let problem = WholeLineProblem::sized(&sys, 0.0, 1.0 / 64.0, 30.0).unwrap();
    let pm = WholeLineSolver::new(&sys, &problem).unwrap().projector_matrix(0.0, 16).unwrap();
    let eye = DMatrix::identity(17, 17);
    assert!((&pm.p - eye).amax() < 1e-3);
    assert!(pm.idempotence < 1e-3);
    assert_eq!((pm.rank_p, pm.rank_q), (17, 0));
}

#[test]
fn stable_delay_decays_near_its_dominant_rate() {
    let sys = delayed_scalar();
    let report = verify_dichotomy(&sys, &VerifyOptions::for_system(&sys)).unwrap();
    assert_eq!(report.verdict, Verdict::Dichotomy);
    let base = &report.base_times[0];
    let fit = base.forward.as_ref().unwrap();
    assert!(fit.lambda > 0.0);
    assert!((fit.lambda - 0.3181).abs() <= 0.1 * 0.3181, "{}", fit.lambda);
    assert!(base.backward.is_none());
    assert!(base.theory_ratio <= 1.0);
    assert!(base.p_bound_ok);
}

#[test]
fn perturbed_delay_keeps_the_dichotomy() {
    let sys = perturbed_delay();
    let mut opts = VerifyOptions::for_system(&sys);
    opts.s_list = vec![-2.0, 0.0, 3.0];
    let report = verify_dichotomy(&sys, &opts).unwrap();
    assert_eq!(report.verdict, Verdict::Dichotomy);
    for base in &report.base_times {
        assert!(base.forward.as_ref().unwrap().lambda > 0.0);
        assert!(base.theory_ratio <= 1.0);
    }
    let f = report.fredholm.unwrap();
    assert_eq!((f.dim_ker, f.dim_ker_adjoint, f.index), (0, 0, 0));
    assert!(f.hypotheses_met);
}

#[test]
fn fredholm_index_is_stable_under_refinement() {
    let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[1.0]).unwrap())
        .with_minus_limit(vec![Mat::from_element(1, 1, -1.0)])
        .unwrap();
    for step in [0.25, 0.125] {
        let r = fredholm_diagnostics(&sys, &WholeLineProblem::new(30.0, step).unwrap(), 3).unwrap();
        assert_eq!((r.dim_ker, r.dim_ker_adjoint, r.index), (0, 1, -1));
    }
}

#[test]
fn gamma_grows_with_the_delay_coupling() {
    let weak = gamma0_estimate(&stable_scalar(), &WholeLineProblem::new(25.0, 1.0 / 32.0).unwrap()).unwrap();
    let strong = gamma0_estimate(&delayed_scalar(), &WholeLineProblem::new(40.0, 1.0 / 32.0).unwrap()).unwrap();
    assert!(weak.gamma0 >= 1.0 && strong.gamma0 >= 1.0);
    assert!(strong.inv_norm > weak.inv_norm);
    assert!(strong.lambda_theory < weak.lambda_theory);
}
