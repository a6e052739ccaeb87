//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dichotomy_core::dichotomy::{fredholm_diagnostics, verify_dichotomy, VerifyOptions, WholeLineProblem, WholeLineSolver};
use dichotomy_core::evolution::HistorySegment;
use dichotomy_core::green::{green_autonomous, neumann_green, small_gain, GreenOptions, NeumannOptions};
use dichotomy_core::spectrum::{root_report, spectral_gap};
use dichotomy_core::system::{
    k_rate, omega, shift_factor, AutonomousSystem, DelaySystem, Mat, PerturbationProfile, ShiftSign, UniformGrid,
};
use dichotomy_lab::{run, stages, Command, Resolved, RunConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Resolved {
    RunConfig::load(&configs_dir().join(format!("{name}.json")))
        .and_then(|c| c.resolve())
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Shipped configs whose limit systems are hyperbolic.
const HYPERBOLIC: [&str; 5] = ["stable_scalar", "saddle", "delayed_scalar", "perturbed_scalar", "perturbed_delay"];

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let delays = [0.0, 0.5, 1.0, 2.0];
    let h = 1e-4;
    let (mut fd, mut shift) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let t: f64 = rng.gen_range(-1e6..1e6);
        let d = (omega(t + h) - omega(t - h)) / (2.0 * h);
        fd = fd.max((d - k_rate(t) * omega(t)).abs());
        for r in delays {
            for (sign, u) in [(ShiftSign::Plus, t + r), (ShiftSign::Minus, t - r)] {
                let w = omega(u);
                shift = shift.max((w - shift_factor(t, r, sign) * omega(t)).abs() / w);
            }
        }
    }
    check(
        fd <= 1e-8 && shift <= 1e-14,
        format!("FD residual {fd:.3e} (<= 1e-8), shift identity relative error {shift:.3e} (<= 1e-14)"),
    )
}

fn newton_oracle() -> Complex64 {
    let mut s = Complex64::new(-0.3, 1.3);
    for _ in 0..60 {
        let e = (-s).exp();
        let step = (s + e) / (1.0 - e);
        s -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    s
}

fn criterion_2() -> Outcome {
    let quarter = AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -FRAC_PI_2]).map_err(err)?;
    let rep = root_report(&quarter).map_err(err)?;
    let axis_err = (rep.axis_argmin.abs() - FRAC_PI_2).abs();
    let unit = AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -1.0]).map_err(err)?;
    let rep2 = root_report(&unit).map_err(err)?;
    let oracle = newton_oracle();
    let dominant = rep2
        .roots
        .iter()
        .filter(|r| r.im > 0.0)
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .ok_or("no root located for x' = -x(t-1)")?;
    let root_err = (Complex64::new(dominant.re, dominant.im) - oracle).norm();
    let conj = rep2
        .roots
        .iter()
        .any(|r| (Complex64::new(r.re, r.im) - oracle.conj()).norm() < 1e-6);
    check(
        !rep.hyperbolic && axis_err < 1e-6 && rep2.hyperbolic && root_err < 1e-6 && conj,
        format!(
            "pi/2 system hyperbolic={} axis root error {axis_err:.3e}; unit delay hyperbolic={} dominant root {:.4}{:+.4}i error {root_err:.3e}",
            rep.hyperbolic, rep2.hyperbolic, dominant.re, dominant.im
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_exp = 0.0f64;
    for a in [-1.0, -2.0] {
        let sys = AutonomousSystem::scalar(&[0.0], &[a]).map_err(err)?;
        let grid = UniformGrid::new(-5.0, 10.0, 1.0 / 64.0).map_err(err)?;
        let k = green_autonomous(&sys, spectral_gap(&sys).map_err(err)?, &grid, GreenOptions::default()).map_err(err)?;
        for (t, g) in grid.nodes().zip(&k.samples) {
            let want = if t >= 0.0 { (a * t).exp() } else { 0.0 };
            worst_exp = worst_exp.max((g[(0, 0)] - want).abs());
        }
    }
    let (mut jump, mut rate) = (0.0f64, 0.0f64);
    for name in HYPERBOLIC {
        let cfg = load(name);
        let mut w = Vec::new();
        let g = stages::green(&cfg.system, &cfg.numerics, &mut w).map_err(err)?;
        for b in &g.branches {
            let n = b.jump.len();
            let dev = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (b.jump[i][j] - if i == j { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max);
            jump = jump.max(dev);
            rate = rate.max(b.rate_error.ok_or(format!("{name}: no dominant root"))?);
        }
    }
    check(
        worst_exp <= 1e-6 && jump <= 1e-6 && rate <= 0.1,
        format!("e^(A0 t) sup error {worst_exp:.3e} (<= 1e-6), jump error {jump:.3e} (<= 1e-6), decay-rate relative error {rate:.3e} (<= 0.1)"),
    )
}

fn criterion_4() -> Outcome {
    let (mut res, mut agree) = (0.0f64, 0.0f64);
    for name in HYPERBOLIC {
        let cfg = load(name);
        let mut w = Vec::new();
        let inv = stages::inverse_check(&cfg.system, cfg.numerics.step, &mut w).map_err(err)?;
        res = res.max(inv.relative_residual);
        agree = agree.max(inv.integrator_agreement);
    }
    check(
        res <= 1e-3 && agree <= 1e-4,
        format!("relative residual {res:.3e} (<= 1e-3), integrator agreement {agree:.3e} (<= 1e-4)"),
    )
}

fn criterion_5() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (delays, coeffs) in [(vec![0.0], vec![-1.0]), (vec![0.0, 1.0], vec![0.0, -1.0])] {
        let limit = AutonomousSystem::scalar(&delays, &coeffs).map_err(err)?;
        let a0 = spectral_gap(&limit).map_err(err)?;
        let w = 10.0 + 20.0 / a0;
        let grid = UniformGrid::new(-w, w, 1.0 / 64.0).map_err(err)?;
        let g0 = green_autonomous(&limit, a0, &grid, GreenOptions::default()).map_err(err)?;
        let r = limit.max_delay();
        let threshold = small_gain(&DelaySystem::autonomous(&limit), g0.fit_k, g0.fit_a, 10.0).threshold;
        let mut profiles = vec![PerturbationProfile::rational(Mat::from_element(1, 1, 0.5 * threshold))];
        profiles.extend((1..delays.len()).map(|_| PerturbationProfile::zero(1)));
        let sys = DelaySystem::autonomous(&limit).with_perturbations(profiles).map_err(err)?;
        let t_grid = UniformGrid::new(-5.0, 5.0, 1.0 / 8.0).map_err(err)?;
        let margin = (10.0 / g0.fit_a).min(0.5 * (w - 10.0 - r));
        let opts = NeumannOptions {
            order: 6,
            margin: Some(margin),
        };
        let k = neumann_green(&sys, &g0, opts, &t_grid, &t_grid).map_err(err)?;
        let geometric = k.term_norms.windows(2).all(|p| p[1] < p[0]);
        let pass = k.ratio < 1.0 && geometric && k.fit_a >= 0.9 * k.constants.a1;
        ok &= pass;
        lines.push(format!(
            "r={r}: eps {:.3e} = 0.5 threshold, ratio {:.3e}, fitted decay {:.4} vs 0.9 a1 = {:.4}",
            k.constants.eps,
            k.ratio,
            k.fit_a,
            0.9 * k.constants.a1
        ));
    }
    check(ok, lines.join("; "))
}

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    let mut ratios = Vec::new();
    for name in ["perturbed_delay", "saddle"] {
        let cfg = load(name);
        let p = stages::pairing(&cfg.system, &cfg.numerics).map_err(err)?;
        worst = worst.max(p.max_residual);
        ratios.extend(p.pairs.iter().filter_map(|s| s.ratio));
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    check(
        worst <= 1e-4 && ratios.len() >= 10 && lo >= 3.0 && hi <= 5.0,
        format!(
            "worst residual {worst:.3e} (<= 1e-4 |x||y|), step-halving ratios in [{lo:.3}, {hi:.3}] over {} pairs",
            ratios.len()
        ),
    )
}

fn options(cfg: &Resolved) -> VerifyOptions {
    stages::verify_options(&cfg.numerics, false)
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in ["stable_scalar", "saddle"] {
        let cfg = load(name);
        let sys = &cfg.system;
        let report = verify_dichotomy(sys, &options(&cfg)).map_err(err)?;
        let solver = WholeLineSolver::new(sys, &report.problem).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut exact = true;
        for &s in &report.s_list {
            for _ in 0..10 {
                let n = sys.dim();
                let r = sys.max_delay();
                let m = if r == 0.0 { 0 } else { report.m };
                let values = DMatrix::from_fn(n, m + 1, |_, _| rng.gen_range(-1.0..1.0));
                let phi = HistorySegment::new(s, r, values).map_err(err)?;
                let split = solver.project(s, &phi).map_err(err)?;
                exact &= split.p.add(&split.q).map_err(err)?.values() == phi.values();
            }
        }
        let idem = report.base_times.iter().map(|b| b.projector.idempotence).fold(0.0, f64::max);
        let bound = report.base_times.iter().all(|b| b.p_bound_ok);
        let comm = report.base_times.iter().map(|b| b.max_commutation).fold(0.0, f64::max);
        let horizon_ok = report.horizon >= 20.0;
        let pass = exact && idem <= 1e-3 && bound && comm <= 1e-2 && horizon_ok;
        ok &= pass;
        lines.push(format!(
            "{name}: P+Q exact={exact}, |P^2-P| {idem:.3e}, |P phi| <= gamma0 |phi| {bound} (gamma0 {:.4}), commutation {comm:.3e} over t-s <= {}",
            report.gamma0.gamma0, report.horizon
        ));
    }
    check(ok, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;

    let cfg = load("stable_scalar");
    let rep = verify_dichotomy(&cfg.system, &options(&cfg)).map_err(err)?;
    let identity = rep.base_times.iter().all(|b| (&b.projector.p - DMatrix::identity(b.projector.p.nrows(), b.projector.p.ncols())).amax() <= 1e-3);
    let lam: Vec<f64> = rep.base_times.iter().filter_map(|b| b.forward.as_ref().map(|f| f.lambda)).collect();
    let in_band = |l: &f64| (0.9..=1.1).contains(l);
    let pass = identity && !lam.is_empty() && lam.iter().all(in_band);
    ok &= pass;
    lines.push(format!("stable scalar: P = I {identity}, forward lambda {lam:.4?}"));

    let cfg = load("saddle");
    let rep = verify_dichotomy(&cfg.system, &options(&cfg)).map_err(err)?;
    let fwd: Vec<f64> = rep.base_times.iter().filter_map(|b| b.forward.as_ref().map(|f| f.lambda)).collect();
    let bwd: Vec<f64> = rep.base_times.iter().filter_map(|b| b.backward.as_ref().map(|f| f.lambda)).collect();
    let pass = !fwd.is_empty() && !bwd.is_empty() && fwd.iter().all(in_band) && bwd.iter().all(in_band);
    ok &= pass;
    lines.push(format!("saddle: forward lambda {fwd:.4?}, backward lambda {bwd:.4?}"));

    for name in ["perturbed_scalar", "perturbed_delay"] {
        let cfg = load(name);
        let rep = verify_dichotomy(&cfg.system, &options(&cfg)).map_err(err)?;
        let lam: Vec<f64> = rep.base_times.iter().filter_map(|b| b.forward.as_ref().map(|f| f.lambda)).collect();
        let problem = WholeLineProblem::new(cfg.numerics.half_width, cfg.numerics.step).map_err(err)?.coarse();
        let f = fredholm_diagnostics(&cfg.system, &problem, cfg.numerics.seed).map_err(err)?;
        let pass = !lam.is_empty()
            && lam.iter().all(|&l| l > 0.0)
            && (f.dim_ker, f.dim_ker_adjoint, f.index) == (0, 0, 0)
            && f.range_orth_residual <= 1e-6;
        ok &= pass;
        lines.push(format!(
            "{name}: forward lambda {lam:.4?}, fredholm ({}, {}, {}, {:.1e})",
            f.dim_ker, f.dim_ker_adjoint, f.index, f.range_orth_residual
        ));
    }
    check(ok, lines.join("; "))
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for name in HYPERBOLIC {
        let cfg = load(name);
        let rep = verify_dichotomy(&cfg.system, &options(&cfg)).map_err(err)?;
        let ratio = rep.base_times.iter().map(|b| b.theory_ratio).fold(0.0, f64::max);
        worst = worst.max(ratio);
        lines.push(format!("{name} {ratio:.3} (l = {})", rep.gamma0.l));
    }
    check(
        worst <= 1.0,
        format!("max |T P phi| / (2 gamma0^2 e^(-lambda_theory ts) |phi|) = {worst:.3} (<= 1): {}", lines.join(", ")),
    )
}

fn criterion_10() -> Outcome {
    let cfg = load("stable_scalar");
    let base = std::env::temp_dir().join(format!("dichotomy-acceptance-{}", std::process::id()));
    let (a, b) = (base.join("a"), base.join("b"));
    run(&cfg, Command::All, &a).map_err(err)?;
    let t0 = Instant::now();
    let out = run(&cfg, Command::All, &b).map_err(err)?;
    let mut same = true;
    let mut compared = 0;
    for f in &out.files {
        let name = f.file_name().ok_or("bad file name")?;
        same &= std::fs::read(a.join(name)).map_err(err)? == std::fs::read(f).map_err(err)?;
        compared += 1;
    }
    let overhead = t0.elapsed().as_secs_f64();
    let _ = std::fs::remove_dir_all(&base);
    check(
        same && compared > 0 && overhead < 5.0,
        format!("{compared} artifacts byte-identical across two runs; repeat run and comparison took {overhead:.2}s (< 5s)"),
    )
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 10] = [
        ("weight identities", 1.0, criterion_1),
        ("hyperbolicity oracle", 5.0, criterion_2),
        ("Green's function oracle", 30.0, criterion_3),
        ("inverse property", 30.0, criterion_4),
        ("Neumann series", 60.0, criterion_5),
        ("adjoint pairing", 10.0, criterion_6),
        ("projection algebra", 60.0, criterion_7),
        ("dichotomy verdicts", 120.0, criterion_8),
        ("theoretical-bound consistency", 60.0, criterion_9),
        ("determinism", 60.0, criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = f();
        let secs = t0.elapsed().as_secs_f64();
        let (status, msg) = match &result {
            Ok(m) if secs <= *budget => ("PASS", m.clone()),
            Ok(m) => ("FAIL", format!("{m}; runtime over budget")),
            Err(m) => ("FAIL", m.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {:>2} [{status}] {name}: {msg} [{secs:.2}s, budget {budget}s]", i + 1);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
