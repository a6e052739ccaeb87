//! Characteristic matrix, root counting and location, hyperbolicity.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::{mat_norm, AutonomousSystem, Branch, DelaySystem};

pub type CMat = DMatrix<Complex64>;

const AXIS_TOL: f64 = 1e-8;
const MAX_PHASE_JUMP: f64 = std::f64::consts::FRAC_PI_4;
const LEAF_DIAMETER: f64 = 1e-3;
/// Half-width of the strip searched for roots when computing the gap.
const STRIP: f64 = 1.0;

/// `Δ(s) = sI - Σ_j A_j e^{-s r_j}`.
pub fn char_matrix(limit: &AutonomousSystem, s: Complex64) -> CMat {
    let n = limit.dim();
    let mut m = CMat::identity(n, n) * s;
    for (a, &r) in limit.matrices.iter().zip(&limit.delays) {
        let e = (-s * r).exp();
        m -= a.map(|x| Complex64::new(x, 0.0) * e);
    }
    m
}

/// `Δ'(s) = I + Σ_j r_j A_j e^{-s r_j}`.
pub fn char_derivative(limit: &AutonomousSystem, s: Complex64) -> CMat {
    let n = limit.dim();
    let mut m = CMat::identity(n, n);
    for (a, &r) in limit.matrices.iter().zip(&limit.delays) {
        if r != 0.0 {
            let e = (-s * r).exp() * r;
            m += a.map(|x| Complex64::new(x, 0.0) * e);
        }
    }
    m
}

pub fn smallest_singular_value(m: &CMat) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].norm();
    }
    m.singular_values().min()
}

/// Characteristic matrix sampled at one point.
#[derive(Clone, Debug)]
pub struct CharPoint {
    pub s: Complex64,
    pub delta: CMat,
    pub det: Complex64,
    pub smin: f64,
}

impl CharPoint {
    pub fn new(limit: &AutonomousSystem, s: Complex64) -> Self {
        let delta = char_matrix(limit, s);
        let det = delta.determinant();
        let smin = smallest_singular_value(&delta);
        Self {
            s,
            delta,
            det,
            smin,
        }
    }
}

/// `Σ_j |A_j| e^{r_j c} + c`: every root with `|Re s| <= c` has `|s|` below it.
pub fn root_window_bound(limit: &AutonomousSystem, c: f64) -> f64 {
    limit
        .matrices
        .iter()
        .zip(&limit.delays)
        .map(|(a, &r)| mat_norm(a) * (r * c).exp())
        .sum::<f64>()
        + c
}

/// Minimum of the smallest singular value of `Δ(iz)` over `z ∈ [-z_max, z_max]`
/// and the `z` attaining it. Grid minima are polished by golden-section search.
pub fn axis_scan(limit: &AutonomousSystem, z_max: f64, step: f64) -> (f64, f64) {
    let f = |z: f64| smallest_singular_value(&char_matrix(limit, Complex64::new(0.0, z)));
    let count = ((2.0 * z_max / step).ceil() as usize).max(2);
    let h = 2.0 * z_max / count as f64;
    let vals: Vec<f64> = (0..=count).map(|i| f(-z_max + i as f64 * h)).collect();
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=count {
        let left = if i > 0 { vals[i - 1] } else { f64::INFINITY };
        let right = if i < count { vals[i + 1] } else { f64::INFINITY };
        let z = -z_max + i as f64 * h;
        if vals[i] <= left && vals[i] <= right {
            let lo = (z - h).max(-z_max);
            let hi = (z + h).min(z_max);
            let (zm, fm) = golden_min(&f, lo, hi);
            let cand = if fm < vals[i] { (fm, zm) } else { (vals[i], z) };
            if cand.0 < best.0 {
                best = cand;
            }
        } else if vals[i] < best.0 {
            best = (vals[i], z);
        }
    }
    best
}

pub fn imaginary_axis_margin(limit: &AutonomousSystem, z_max: f64, step: f64) -> f64 {
    axis_scan(limit, z_max, step).0
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Closed rectangle `[re.0, re.1] × [im.0, im.1]` in the complex plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rect {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl Rect {
    pub fn new(re: (f64, f64), im: (f64, f64)) -> Self {
        Self { re, im }
    }

    fn diameter(&self) -> f64 {
        (self.re.1 - self.re.0).hypot(self.im.1 - self.im.0)
    }

    fn grow(&self, d: f64) -> Self {
        Self {
            re: (self.re.0 - d, self.re.1 + d),
            im: (self.im.0 - d, self.im.1 + d),
        }
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re.0, self.im.0),
            Complex64::new(self.re.1, self.im.0),
            Complex64::new(self.re.1, self.im.1),
            Complex64::new(self.re.0, self.im.1),
        ]
    }
}

struct EdgeTrace {
    phase: f64,
    smin: f64,
    max_jump: f64,
}

fn det_and_smin(limit: &AutonomousSystem, s: Complex64) -> (Complex64, f64) {
    let d = char_matrix(limit, s);
    let smin = smallest_singular_value(&d);
    (d.determinant(), smin)
}

/// Accumulated change of `arg det Δ` along the segment `a → b`, refining until
/// every accepted sub-segment changes phase by less than π/4.
fn trace_edge(limit: &AutonomousSystem, a: Complex64, b: Complex64, base: usize) -> EdgeTrace {
    let (da, sa) = det_and_smin(limit, a);
    let mut out = EdgeTrace {
        phase: 0.0,
        smin: sa,
        max_jump: 0.0,
    };
    let mut prev = (a, da);
    for k in 1..=base {
        let p = a + (b - a) * (k as f64 / base as f64);
        let (dp, sp) = det_and_smin(limit, p);
        out.smin = out.smin.min(sp);
        refine(limit, prev, (p, dp), 0, &mut out);
        prev = (p, dp);
    }
    out
}

fn refine(
    limit: &AutonomousSystem,
    (a, da): (Complex64, Complex64),
    (b, db): (Complex64, Complex64),
    depth: usize,
    out: &mut EdgeTrace,
) {
    let jump = (db / da).arg();
    if jump.abs() < MAX_PHASE_JUMP || depth >= 40 {
        out.phase += jump;
        out.max_jump = out.max_jump.max(jump.abs());
        return;
    }
    let m = (a + b) * 0.5;
    let (dm, sm) = det_and_smin(limit, m);
    out.smin = out.smin.min(sm);
    refine(limit, (a, da), (m, dm), depth + 1, out);
    refine(limit, (m, dm), (b, db), depth + 1, out);
}

/// Winding number of `det Δ` along the boundary of `rect`, and the smallest
/// boundary singular value seen.
fn winding(limit: &AutonomousSystem, rect: &Rect) -> (i64, f64, f64) {
    let c = rect.corners();
    let mut phase = 0.0;
    let mut smin = f64::INFINITY;
    let mut max_jump: f64 = 0.0;
    for k in 0..4 {
        let (a, b) = (c[k], c[(k + 1) % 4]);
        let base = (((b - a).norm() / 0.05).ceil() as usize).clamp(4, 4096);
        let e = trace_edge(limit, a, b, base);
        phase += e.phase;
        smin = smin.min(e.smin);
        max_jump = max_jump.max(e.max_jump);
    }
    let w = phase / (2.0 * std::f64::consts::PI);
    (w.round() as i64, smin, max_jump)
}

/// Number of roots of `det Δ` inside the rectangle, counted with multiplicity.
///
/// If the boundary passes within `1e-8` (smallest singular value) of a root,
/// the rectangle is grown outward by one boundary step and retried, up to
/// three times.
pub fn count_roots_rectangle(
    limit: &AutonomousSystem,
    re_range: (f64, f64),
    im_range: (f64, f64),
) -> Result<i64> {
    count_in(limit, &Rect::new(re_range, im_range)).map(|(k, _)| k)
}

/// Count plus the rectangle actually used (after any outward retries).
fn count_in(limit: &AutonomousSystem, rect: &Rect) -> Result<(i64, Rect)> {
    let step = (rect.diameter() / 256.0).max(1e-6);
    let mut r = *rect;
    let mut smin = 0.0;
    for _ in 0..4 {
        let (k, s, jump) = winding(limit, &r);
        smin = s;
        if s > AXIS_TOL {
            debug_assert!(jump < MAX_PHASE_JUMP || s < 1e-6);
            return Ok((k, r));
        }
        r = r.grow(step);
    }
    Err(Error::RectangleOnRoot { smin })
}

/// Newton on `det Δ`, using `d/ds log det Δ = tr(Δ⁻¹ Δ')`.
pub fn newton_root(limit: &AutonomousSystem, s0: Complex64, tol: f64) -> (Complex64, bool) {
    let mut s = s0;
    for _ in 0..100 {
        let d = char_matrix(limit, s);
        let dp = char_derivative(limit, s);
        let Some(x) = d.lu().solve(&dp) else {
            return (s, true);
        };
        let tr = x.trace();
        if tr.norm() == 0.0 || !tr.is_finite() {
            return (s, false);
        }
        let step = tr.inv();
        s -= step;
        if step.norm() <= tol * (1.0 + s.norm()) {
            return (s, true);
        }
    }
    (s, false)
}

#[derive(Clone, Debug, Serialize)]
pub struct Root {
    pub re: f64,
    pub im: f64,
    /// `|det Δ(root)|`.
    pub residual: f64,
    /// Count returned by the argument principle for the leaf rectangle.
    pub multiplicity: i64,
    pub converged: bool,
}

impl Root {
    pub fn s(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// Locate all roots inside `rect` by bisection down to diameter `1e-3` then
/// Newton refinement.
pub fn locate_roots(limit: &AutonomousSystem, rect: &Rect) -> Result<(Vec<Root>, i64)> {
    let (total, used) = count_in(limit, rect)?;
    let mut roots = Vec::new();
    if total > 0 {
        split(limit, &used, total, 0, &mut roots)?;
    }
    roots.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    Ok((roots, total))
}

fn split(
    limit: &AutonomousSystem,
    rect: &Rect,
    count: i64,
    depth: usize,
    out: &mut Vec<Root>,
) -> Result<()> {
    if count <= 0 {
        return Ok(());
    }
    if rect.diameter() <= LEAF_DIAMETER || depth > 60 {
        let c = Complex64::new(
            0.5 * (rect.re.0 + rect.re.1),
            0.5 * (rect.im.0 + rect.im.1),
        );
        let (s, converged) = newton_root(limit, c, 1e-12);
        let residual = char_matrix(limit, s).determinant().norm();
        out.push(Root {
            re: s.re,
            im: s.im,
            residual,
            multiplicity: count,
            converged,
        });
        return Ok(());
    }
    // Split the longer side slightly off-centre so that symmetric root sets
    // (real roots, conjugate pairs) do not land on the cut.
    let frac = if depth.is_multiple_of(2) { 0.5123 } else { 0.4871 };
    let (a, b) = if rect.re.1 - rect.re.0 >= rect.im.1 - rect.im.0 {
        let m = rect.re.0 + frac * (rect.re.1 - rect.re.0);
        (
            Rect::new((rect.re.0, m), rect.im),
            Rect::new((m, rect.re.1), rect.im),
        )
    } else {
        let m = rect.im.0 + frac * (rect.im.1 - rect.im.0);
        (
            Rect::new(rect.re, (rect.im.0, m)),
            Rect::new(rect.re, (m, rect.im.1)),
        )
    };
    let (ka, ua) = count_in(limit, &a)?;
    let kb = if ua == a {
        count - ka
    } else {
        // `a` was grown past the cut; count `b` on its own.
        count_in(limit, &b)?.0
    };
    split(limit, &ua, ka, depth + 1, out)?;
    split(limit, &b, kb, depth + 1, out)
}

#[derive(Clone, Debug, Serialize)]
pub struct RootReport {
    pub hyperbolic: bool,
    /// `a₀`, absent when the system is not hyperbolic.
    pub strip_halfwidth: Option<f64>,
    pub axis_margin: f64,
    /// `z` minimising the smallest singular value of `Δ(iz)`.
    pub axis_argmin: f64,
    pub axis_warning: bool,
    pub roots: Vec<Root>,
    pub winding_count: i64,
    /// Imaginary-part bound of the scanned window.
    pub scan_window: f64,
    pub scan_rect: Rect,
    /// Fresh winding count on the certified strip `|Re s| <= a₀`.
    pub strip_recheck: Option<i64>,
}

/// Full spectral analysis of one limit system. Never fails on a
/// non-hyperbolic system; that is reported through `hyperbolic`.
pub fn root_report(limit: &AutonomousSystem) -> Result<RootReport> {
    let axis_bound = root_window_bound(limit, 0.0) + 1.0;
    let (margin, argmin) = axis_scan(limit, axis_bound, 1e-3);
    let window = root_window_bound(limit, STRIP) + 0.5;
    let rect = Rect::new((-STRIP, STRIP), (-window, window));
    if margin < AXIS_TOL {
        return Ok(RootReport {
            hyperbolic: false,
            strip_halfwidth: None,
            axis_margin: margin,
            axis_argmin: argmin,
            axis_warning: true,
            roots: Vec::new(),
            winding_count: 0,
            scan_window: window,
            scan_rect: rect,
            strip_recheck: None,
        });
    }
    let (roots, total) = locate_roots(limit, &rect)?;
    let d = roots
        .iter()
        .map(|r| r.re.abs())
        .fold(f64::INFINITY, f64::min);
    if d < 1e-9 {
        let z = roots
            .iter()
            .find(|r| r.re.abs() < 1e-9)
            .map(|r| r.im)
            .unwrap_or(argmin);
        return Ok(RootReport {
            hyperbolic: false,
            strip_halfwidth: None,
            axis_margin: margin,
            axis_argmin: z,
            axis_warning: true,
            roots,
            winding_count: total,
            scan_window: window,
            scan_rect: rect,
            strip_recheck: None,
        });
    }
    let a0 = (0.9 * d).min(0.9);
    let recheck_bound = root_window_bound(limit, a0) + 0.5;
    let (recheck, _) = count_in(limit, &Rect::new((-a0, a0), (-recheck_bound, recheck_bound)))?;
    Ok(RootReport {
        hyperbolic: recheck == 0,
        strip_halfwidth: Some(a0),
        axis_margin: margin,
        axis_argmin: argmin,
        axis_warning: false,
        roots,
        winding_count: total,
        scan_window: window,
        scan_rect: rect,
        strip_recheck: Some(recheck),
    })
}

/// `a₀ = min(0.9·d, 0.9)` with `d` the distance of the nearest root to the
/// imaginary axis.
pub fn spectral_gap(limit: &AutonomousSystem) -> Result<f64> {
    let report = root_report(limit)?;
    match (report.hyperbolic, report.strip_halfwidth) {
        (true, Some(a0)) => Ok(a0),
        _ => Err(Error::NotHyperbolic {
            z: report.axis_argmin,
        }),
    }
}

/// Gaps of both limit systems, `(a₀⁺, a₀⁻)`.
pub fn is_asymptotically_hyperbolic(sys: &DelaySystem) -> Result<(f64, f64)> {
    let plus = spectral_gap(&sys.limit(Branch::Plus)).map_err(|e| e.on_branch(Branch::Plus))?;
    let minus = if sys.limits_differ() {
        spectral_gap(&sys.limit(Branch::Minus)).map_err(|e| e.on_branch(Branch::Minus))?
    } else {
        plus
    };
    Ok((plus, minus))
}
