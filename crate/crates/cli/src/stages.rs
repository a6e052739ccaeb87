use dichotomy_core::dichotomy::{
    build_forcing, extend_history, fredholm_diagnostics, green_cross_check, verify_dichotomy, Direction,
    DichotomyReport, FredholmReport, LeakageReport, VerifyOptions, WholeLineProblem, WholeLineSolver,
};
use dichotomy_core::evolution::{adjoint_pairing_residual, convolve_solve, integrate, HistorySegment, Kernel};
use dichotomy_core::green::{
    green_autonomous, neumann_green, GreenKernel, GreenOptions, NeumannConstants, NeumannOptions,
};
use dichotomy_core::spectrum::{locate_roots, root_report, root_window_bound, spectral_gap, Rect, Root, RootReport};
use dichotomy_core::system::{
    k_rate, omega, shift_factor, AutonomousSystem, Branch, DelaySystem, GridFunction, ShiftSign, UniformGrid,
};
use dichotomy_core::Result;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Numerics;

/// Branches whose limit systems need separate treatment.
fn branches(sys: &DelaySystem) -> Vec<Branch> {
    if sys.limits_differ() {
        vec![Branch::Plus, Branch::Minus]
    } else {
        vec![Branch::Plus]
    }
}

/// `max(1, r_N)`, the natural time unit of a system.
fn unit(sys: &DelaySystem) -> f64 {
    sys.max_delay().max(1.0)
}

/// Smooth bump supported on `[c - w, c + w]`.
pub fn bump(t: f64, c: f64, w: f64) -> f64 {
    let u = (t - c) / w;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

// ---------------------------------------------------------------- weights

#[derive(Clone, Debug, Serialize)]
pub struct WeightCheck {
    pub samples: usize,
    pub fd_step: f64,
    pub max_derivative_residual: f64,
    pub max_shift_relative_error: f64,
}

/// `ω' = kω` by centered differences and `ω(t ± r_j) = M_j^± ω(t)` at
/// random `t ∈ [-10⁶, 10⁶]`.
pub fn weight_check(sys: &DelaySystem, seed: u64) -> WeightCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let samples = 10_000;
    let (mut fd, mut shift) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let t: f64 = rng.gen_range(-1e6..1e6);
        let d = (omega(t + h) - omega(t - h)) / (2.0 * h);
        fd = fd.max((d - k_rate(t) * omega(t)).abs());
        for &r in sys.delays() {
            for (sign, u) in [(ShiftSign::Plus, t + r), (ShiftSign::Minus, t - r)] {
                let lhs = omega(u);
                let rel = (lhs - shift_factor(t, r, sign) * omega(t)).abs() / lhs;
                shift = shift.max(rel);
            }
        }
    }
    WeightCheck {
        samples,
        fd_step: h,
        max_derivative_residual: fd,
        max_shift_relative_error: shift,
    }
}

// --------------------------------------------------------------- spectrum

#[derive(Clone, Debug, Serialize)]
pub struct BranchSpectrum {
    pub branch: Branch,
    pub dominant: Option<Root>,
    #[serde(flatten)]
    pub report: RootReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumResult {
    pub hyperbolic: bool,
    pub branches: Vec<BranchSpectrum>,
}

pub fn spectrum(sys: &DelaySystem, warnings: &mut Vec<String>) -> Result<SpectrumResult> {
    let mut out = Vec::new();
    for branch in [Branch::Plus, Branch::Minus] {
        let report = root_report(&sys.limit(branch))?;
        if report.axis_warning {
            warnings.push(format!(
                "spectrum: {branch} limit has a characteristic root on the imaginary axis near z = {}",
                report.axis_argmin
            ));
        }
        let dominant = report
            .roots
            .iter()
            .filter(|r| r.im >= 0.0)
            .max_by(|a, b| a.re.total_cmp(&b.re))
            .cloned();
        out.push(BranchSpectrum {
            branch,
            dominant,
            report,
        });
    }
    Ok(SpectrumResult {
        hyperbolic: out.iter().all(|b| b.report.hyperbolic),
        branches: out,
    })
}

// ------------------------------------------------------------------ green

#[derive(Clone, Debug, Serialize)]
pub struct BranchGreen {
    pub branch: Branch,
    /// Distance of the nearest characteristic root to the imaginary axis.
    pub dominant_distance: Option<f64>,
    /// `|fit_a - dominant_distance| / dominant_distance`.
    pub rate_error: Option<f64>,
    pub jump: Vec<Vec<f64>>,
    pub kernel: GreenKernel,
}

#[derive(Clone, Debug, Serialize)]
pub struct NeumannResult {
    pub constants: NeumannConstants,
    pub ratio: f64,
    pub term_norms: Vec<f64>,
    pub fit_k: f64,
    pub fit_a: f64,
    /// `fit_a / a₁`.
    pub decay_over_a1: f64,
    pub truncation_bound: f64,
    pub window: (f64, f64),
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenResult {
    pub window: (f64, f64),
    pub step: f64,
    pub branches: Vec<BranchGreen>,
    pub neumann: Option<NeumannResult>,
    pub neumann_skipped: Option<String>,
}

/// Nearest root to the imaginary axis, searched in a strip wide enough to
/// contain the rate seen in the kernel fit.
fn dominant_distance(limit: &AutonomousSystem, fit_a: f64) -> Option<f64> {
    let c = (1.5 * fit_a).max(1.0) + 0.1;
    let w = root_window_bound(limit, c) + 0.5;
    let (roots, _) = locate_roots(limit, &Rect::new((-c, c), (-w, w))).ok()?;
    let d = roots.iter().map(|r| r.re.abs()).fold(f64::INFINITY, f64::min);
    d.is_finite().then_some(d)
}

fn kernel_for(limit: &AutonomousSystem, lo: f64, hi: f64, step: f64) -> Result<GreenKernel> {
    let a0 = spectral_gap(limit)?;
    green_autonomous(limit, a0, &UniformGrid::new(lo, hi, step)?, GreenOptions::default())
}

pub fn green(sys: &DelaySystem, num: &Numerics, warnings: &mut Vec<String>) -> Result<GreenResult> {
    let step = num.step;
    let mut out = Vec::new();
    for branch in branches(sys) {
        let limit = sys.limit(branch);
        let a0 = spectral_gap(&limit)?;
        let w = num.horizon.max(10.0 * unit(sys) + 20.0 / a0);
        let kernel = kernel_for(&limit, -w, w, step)?;
        warnings.extend(kernel.warnings.iter().map(|m| format!("green ({branch}): {m}")));
        let dominant = dominant_distance(&limit, kernel.fit_a);
        let jump = kernel.jump.row_iter().map(|r| r.iter().copied().collect()).collect();
        out.push(BranchGreen {
            branch,
            dominant_distance: dominant,
            rate_error: dominant.map(|d| (kernel.fit_a - d).abs() / d),
            jump,
            kernel,
        });
    }
    let window = (out[0].kernel.grid.t_min, out[0].kernel.grid.t_max());
    let (neumann, neumann_skipped) = if sys.is_unperturbed() {
        (None, Some("system has no perturbation".to_string()))
    } else if sys.limits_differ() {
        (None, Some("limits differ at ±∞; no single unperturbed kernel".to_string()))
    } else {
        match neumann_stage(sys, &out[0].kernel, num.step) {
            Ok(n) => (Some(n), None),
            Err(e) => {
                warnings.push(format!("green: Neumann series skipped: {e}"));
                (None, Some(e.to_string()))
            }
        }
    };
    Ok(GreenResult {
        window,
        step,
        branches: out,
        neumann,
        neumann_skipped,
    })
}

/// Perturbed kernel on `[-5, 5]²` with the series' predicted constants.
pub fn neumann_stage(sys: &DelaySystem, g0: &GreenKernel, step: f64) -> Result<NeumannResult> {
    let h = step.max(1.0 / 8.0);
    let grid = UniformGrid::new(-5.0, 5.0, h)?;
    let reach = g0.grid.t_max().min(-g0.grid.t_min);
    let margin = (10.0 / g0.fit_a).min(0.5 * (reach - 10.0 - sys.max_delay())).max(0.0);
    let opts = NeumannOptions {
        order: 6,
        margin: Some(margin),
    };
    let k = neumann_green(sys, g0, opts, &grid, &grid)?;
    Ok(NeumannResult {
        constants: k.constants,
        ratio: k.ratio,
        term_norms: k.term_norms.clone(),
        fit_k: k.fit_k,
        fit_a: k.fit_a,
        decay_over_a1: k.fit_a / k.constants.a1,
        truncation_bound: k.truncation_bound,
        window: (grid.t_min, grid.t_max()),
        step: h,
    })
}

// ------------------------------------------------------------------ solve

#[derive(Clone, Debug, Serialize)]
pub struct InverseCheck {
    pub branch: Branch,
    pub window: (f64, f64),
    pub relative_residual: f64,
    /// Sup distance to the method-of-steps solution restarted from the
    /// convolution's own history.
    pub integrator_agreement: f64,
    pub comparison_window: (f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct WholeLineSummary {
    pub s: f64,
    pub half_width: f64,
    pub step: f64,
    pub interior_residual: f64,
    pub leakage: LeakageReport,
    pub v_minus_infinity: Vec<f64>,
    pub v_plus_infinity: Vec<f64>,
    pub v_sup: f64,
    pub green_discrepancy: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub inverse: InverseCheck,
    pub whole_line: WholeLineSummary,
    #[serde(skip)]
    pub v: Option<GridFunction>,
}

/// `convolve_solve` on the autonomous plus-limit with a smooth compactly
/// supported forcing, checked against the equation and the integrator.
pub fn inverse_check(sys: &DelaySystem, step: f64, warnings: &mut Vec<String>) -> Result<InverseCheck> {
    let limit = sys.limit(Branch::Plus);
    let auto = DelaySystem::autonomous(&limit);
    let u = unit(sys);
    let a0 = spectral_gap(&limit)?;
    let (lo, hi) = (-10.0 * u, 20.0 * u);
    let span = hi - lo + 1.0;
    let kernel = kernel_for(&limit, -span, span, step)?;
    let grid = UniformGrid::new(lo, hi, step)?;
    let n = sys.dim();
    let h = GridFunction::from_fn(grid, n, |t| {
        DVector::from_fn(n, |c, _| {
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            sign * (bump(t, 1.0, 2.0) + 0.5 * bump(t, 4.0 + c as f64, 1.5)) / (c + 1) as f64
        })
    })?;
    let report = convolve_solve(&auto, Kernel::Autonomous(&kernel), &h)?;
    warnings.extend(report.warnings.iter().map(|m| format!("solve: {m}")));
    let s0 = -2.0 * u;
    let r = sys.max_delay();
    let m = if r == 0.0 { 0 } else { (64.0 * r).round() as usize };
    let x = &report.x;
    let phi = HistorySegment::from_fn(s0, r, m, n, |theta| x.eval(s0 + theta).expect("inside the grid"))?;
    let t_end = s0 + (8.0 * u).min(4.0 / a0.max(0.25));
    let traj = integrate(&auto, s0, &phi, t_end, Some(&h))?;
    let mut worst = 0.0f64;
    for (i, t) in grid.nodes().enumerate() {
        if t >= s0 && t <= t_end {
            worst = worst.max((x.node_value(i) - traj.value(t, 0)?).amax());
        }
    }
    Ok(InverseCheck {
        branch: Branch::Plus,
        window: (lo, hi),
        relative_residual: report.relative_residual,
        integrator_agreement: worst,
        comparison_window: (s0, t_end),
    })
}

/// Whole-line solve for the forward forcing of the unit history at the first
/// base time.
pub fn whole_line(sys: &DelaySystem, num: &Numerics, warnings: &mut Vec<String>) -> Result<(WholeLineSummary, GridFunction)> {
    let step = num.step;
    let s = num.s_list.first().map_or(0.0, |&s| (s / step).round() * step);
    let problem = WholeLineProblem::sized(sys, s.abs(), step, num.half_width)?;
    let solver = WholeLineSolver::new(sys, &problem)?;
    warnings.extend(solver.warnings.iter().map(|m| format!("solve: {m}")));
    let n = sys.dim();
    let r = sys.max_delay();
    let m = if r == 0.0 { 0 } else { num.m };
    let phi = HistorySegment::constant(s, r, m, &DVector::from_element(n, 1.0))?;
    let g = build_forcing(sys, &extend_history(&phi, s, Direction::Forward), &problem.grid())?;
    let mut sol = solver.solve(&g)?;
    warnings.extend(sol.warnings.iter().map(|m| format!("solve: {m}")));
    if sys.is_unperturbed() && !sys.limits_differ() {
        let w = 2.0 * problem.half_width + 1.0;
        let kernel = kernel_for(&sys.limit(Branch::Plus), -w, w, step)?;
        green_cross_check(sys, &g, &mut sol, Kernel::Autonomous(&kernel))?;
    }
    let summary = WholeLineSummary {
        s,
        half_width: problem.half_width,
        step: problem.step,
        interior_residual: sol.interior_residual,
        leakage: sol.leakage.clone(),
        v_minus_infinity: sol.v_minus_infinity.iter().copied().collect(),
        v_plus_infinity: sol.v_plus_infinity.iter().copied().collect(),
        v_sup: sol.v.sup_norm(),
        green_discrepancy: sol.green_discrepancy,
    };
    Ok((summary, sol.v))
}

pub fn solve(sys: &DelaySystem, num: &Numerics, warnings: &mut Vec<String>) -> Result<SolveResult> {
    let inverse = inverse_check(sys, num.step, warnings)?;
    let (whole_line, v) = whole_line(sys, num, warnings)?;
    Ok(SolveResult {
        inverse,
        whole_line,
        v: Some(v),
    })
}

// ---------------------------------------------------------------- pairing

#[derive(Clone, Debug, Serialize)]
pub struct PairSample {
    pub residual: f64,
    pub residual_half_step: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingResult {
    pub pairs: Vec<PairSample>,
    pub step: f64,
    pub window: (f64, f64),
    /// Worst `|⟨Λx, y⟩_μ - ⟨x, Λ*y⟩_μ| / (‖x‖‖y‖)` at the finer step.
    pub max_residual: f64,
    /// Mean residual ratio under step halving over pairs above round-off.
    pub mean_ratio: Option<f64>,
}

type Bumps = Vec<(f64, f64, f64)>;

fn random_bumps(rng: &mut ChaCha8Rng, n: usize, u: f64) -> Bumps {
    (0..n)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-3.0..3.0) * u,
                rng.gen_range(1.0..2.5) * u,
            )
        })
        .collect()
}

fn bump_fn(params: &Bumps) -> impl Fn(f64) -> DVector<f64> + '_ {
    move |t| DVector::from_iterator(params.len(), params.iter().map(|&(a, c, w)| a * bump(t, c, w)))
}

/// Weighted adjoint pairing for 20 random smooth compactly supported pairs at
/// the configured step and at half of it.
pub fn pairing(sys: &DelaySystem, num: &Numerics) -> Result<PairingResult> {
    let n = sys.dim();
    let u = unit(sys);
    let window = (-8.0 * u, 8.0 * u);
    let mut rng = ChaCha8Rng::seed_from_u64(num.seed);
    let pairs: Vec<(Bumps, Bumps)> = (0..20)
        .map(|_| (random_bumps(&mut rng, n, u), random_bumps(&mut rng, n, u)))
        .collect();
    let residual = |px: &Bumps, py: &Bumps, step: f64| -> Result<f64> {
        let grid = UniformGrid::new(window.0, window.1, step)?;
        let x = GridFunction::from_fn(grid, n, bump_fn(px))?;
        let y = GridFunction::from_fn(grid, n, bump_fn(py))?;
        Ok(adjoint_pairing_residual(sys, &x, &y)?.residual)
    };
    let samples: Vec<PairSample> = pairs
        .par_iter()
        .map(|(px, py)| {
            let coarse = residual(px, py, num.step)?;
            let fine = residual(px, py, 0.5 * num.step)?;
            Ok(PairSample {
                residual: coarse,
                residual_half_step: fine,
                ratio: (coarse > 1e-11 && fine > 0.0).then(|| coarse / fine),
            })
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = samples.iter().filter_map(|s| s.ratio).collect();
    Ok(PairingResult {
        max_residual: samples.iter().map(|s| s.residual_half_step).fold(0.0, f64::max),
        mean_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        pairs: samples,
        step: num.step,
        window,
    })
}

// ------------------------------------------------------------- dichotomy

pub fn verify_options(num: &Numerics, fredholm: bool) -> VerifyOptions {
    VerifyOptions {
        s_list: num.s_list.clone(),
        horizon: num.horizon,
        probes: num.probes,
        m: num.m,
        step: num.step,
        half_width: num.half_width,
        seed: num.seed,
        fredholm,
    }
}

pub fn dichotomy(sys: &DelaySystem, num: &Numerics, keep_matrices: bool, warnings: &mut Vec<String>) -> Result<DichotomyReport> {
    let mut report = verify_dichotomy(sys, &verify_options(num, true))?;
    if !keep_matrices {
        for b in &mut report.base_times {
            b.p_matrix = None;
        }
    }
    warnings.extend(report.warnings.iter().map(|m| format!("dichotomy: {m}")));
    Ok(report)
}

pub fn fredholm(sys: &DelaySystem, num: &Numerics) -> Result<FredholmReport> {
    let problem = WholeLineProblem::new(num.half_width, num.step)?.coarse();
    fredholm_diagnostics(sys, &problem, num.seed)
}
