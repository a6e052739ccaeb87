use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::fit::fit_exponential_bound;
use crate::error::{Error, Result};
use crate::spectrum::{char_matrix, count_roots_rectangle, root_window_bound, CMat};
use crate::system::{mat_norm, AutonomousSystem, Mat, Side, UniformGrid};

/// `R(z) = Δ⁻¹(z) - (z + 1)⁻¹ I`, by a direct solve.
pub fn resolvent_remainder(limit: &AutonomousSystem, z: Complex64) -> Result<CMat> {
    let inv = resolvent(limit, z)?;
    let n = limit.dim();
    Ok(inv - CMat::identity(n, n) * (z + 1.0).inv())
}

pub fn resolvent(limit: &AutonomousSystem, z: Complex64) -> Result<CMat> {
    let d = char_matrix(limit, z);
    let n = limit.dim();
    let smin = crate::spectrum::smallest_singular_value(&d);
    if smin <= 1e-12 {
        return Err(Error::Resolvent { re: z.re, im: z.im });
    }
    d.lu()
        .solve(&CMat::identity(n, n))
        .ok_or(Error::Resolvent { re: z.re, im: z.im })
}

/// `S(z) = I + Σ_j A_j e^{-z r_j}`, so that `Δ(z) = (z + 1) I - S(z)`.
fn shifted_sum(limit: &AutonomousSystem, z: Complex64) -> CMat {
    let n = limit.dim();
    let mut s = CMat::identity(n, n);
    for (a, &r) in limit.matrices.iter().zip(&limit.delays) {
        let e = (-z * r).exp();
        s += a.map(|x| Complex64::new(x, 0.0) * e);
    }
    s
}

/// `X(z)^K Δ⁻¹(z)` with `X = S/(z+1)`: what is left of `Δ⁻¹` after the first
/// `K` terms of `Σ_k S^k/(z+1)^{k+1}`.
fn series_remainder(limit: &AutonomousSystem, z: Complex64, order: usize) -> CMat {
    let n = limit.dim();
    let s = shifted_sum(limit, z);
    let d = CMat::identity(n, n) * (z + 1.0) - &s;
    let inv = d
        .lu()
        .solve(&CMat::identity(n, n))
        .unwrap_or_else(|| CMat::from_element(n, n, Complex64::new(f64::NAN, 0.0)));
    let x = s / (z + 1.0);
    let mut out = inv;
    for _ in 0..order {
        out = &x * out;
    }
    out
}

fn series_remainder_scalar(coef: &[(f64, f64)], z: Complex64, order: usize) -> Complex64 {
    let mut s = Complex64::new(1.0, 0.0);
    for &(a, r) in coef {
        s += a * (-z * r).exp();
    }
    let x = s / (z + 1.0);
    x.powu(order as u32) / (z + 1.0 - s)
}

/// One explicit term `C (t - τ)^k / k! · e^{-(t - τ)} · 1_{t >= τ}`.
#[derive(Clone, Debug)]
struct ExplicitTerm {
    k: usize,
    tau: f64,
    coeff: Mat,
}

/// Expand `S(z)^k / (z+1)^{k+1}` for `k < order` into shifted terms.
fn explicit_terms(limit: &AutonomousSystem, order: usize) -> Vec<ExplicitTerm> {
    let n = limit.dim();
    let mut base: Vec<(f64, Mat)> = Vec::new();
    for (j, (a, &r)) in limit.matrices.iter().zip(&limit.delays).enumerate() {
        let m = if j == 0 { a + Mat::identity(n, n) } else { a.clone() };
        if m.iter().any(|x| *x != 0.0) {
            base.push((r, m));
        }
    }
    let mut power: Vec<(f64, Mat)> = vec![(0.0, Mat::identity(n, n))];
    let mut out = Vec::new();
    for k in 0..order {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        for (tau, c) in &power {
            out.push(ExplicitTerm {
                k,
                tau: *tau,
                coeff: c / fact,
            });
        }
        let mut next: Vec<(f64, Mat)> = Vec::new();
        for (tau, c) in &power {
            for (r, b) in &base {
                let t = tau + r;
                let prod = b * c;
                match next.iter_mut().find(|(u, _)| (u - t).abs() < 1e-12) {
                    Some((_, acc)) => *acc += prod,
                    None => next.push((t, prod)),
                }
            }
        }
        power = next;
    }
    out
}

fn explicit_value(terms: &[ExplicitTerm], n: usize, t: f64, side: Side) -> Mat {
    let mut g = Mat::zeros(n, n);
    for term in terms {
        let u = t - term.tau;
        let active = match side {
            Side::Right => u >= 0.0,
            Side::Left => u > 0.0,
        };
        if active {
            g += &term.coeff * (u.powi(term.k as i32) * (-u).exp());
        }
    }
    g
}

/// Settings for [`green_autonomous`].
#[derive(Clone, Copy, Debug)]
pub struct GreenOptions {
    /// Number of series terms inverted in closed form.
    pub order: usize,
    /// Frequency cutoff; `None` picks `max(200/a₀, 50)`.
    pub z_max: Option<f64>,
    /// Skip the root-free strip check (the caller already certified `a₀`).
    pub assume_certified: bool,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self {
            order: 4,
            z_max: None,
            assume_certified: false,
        }
    }
}

/// Sampled `G₀` with its fitted envelope `|G₀(t)| <= K e^{-a|t|}`.
#[derive(Clone, Debug, Serialize)]
pub struct GreenKernel {
    #[serde(skip)]
    pub grid: UniformGrid,
    #[serde(skip)]
    pub samples: Vec<Mat>,
    /// `G₀(0-)`, used when 0 is a grid node.
    #[serde(skip)]
    pub left_at_zero: Mat,
    #[serde(skip)]
    pub jump: Mat,
    pub jump_error: f64,
    pub fit_k: f64,
    pub fit_a: f64,
    pub contour_a0: f64,
    pub z_max: f64,
    pub z_step: f64,
    pub series_order: usize,
    pub tail_estimate: f64,
    pub warnings: Vec<String>,
}

impl GreenKernel {
    pub fn dim(&self) -> usize {
        self.jump.nrows()
    }

    fn zero_index(&self) -> Option<usize> {
        self.grid.node_index(0.0)
    }

    fn node_side(&self, i: usize, side: Side) -> &Mat {
        if side == Side::Left && Some(i) == self.zero_index() {
            &self.left_at_zero
        } else {
            &self.samples[i]
        }
    }

    /// Linear interpolation with the jump at 0 respected; zero off the grid.
    pub fn eval_side(&self, t: f64, side: Side) -> Mat {
        let g = &self.grid;
        let n = self.dim();
        if !g.contains(t) {
            return Mat::zeros(n, n);
        }
        if let Some(i) = g.node_index(t) {
            return self.node_side(i, side).clone();
        }
        let x = ((t - g.t_min) / g.step).clamp(0.0, (g.len - 1) as f64);
        let i = (x.floor() as usize).min(g.len - 2);
        let f = x - i as f64;
        self.node_side(i, Side::Right) * (1.0 - f) + self.node_side(i + 1, Side::Left) * f
    }

    pub fn eval(&self, t: f64) -> Mat {
        self.eval_side(t, Side::Right)
    }

    /// Mean of the one-sided limits; what a trapezoid rule should use at a jump.
    pub fn eval_mean(&self, t: f64) -> Mat {
        if t.abs() < 1e-12 {
            (self.eval_side(0.0, Side::Left) + self.eval_side(0.0, Side::Right)) * 0.5
        } else {
            self.eval(t)
        }
    }

    /// `(|t|, |G₀(t)|)` for every node, both sides at 0.
    pub fn norm_samples(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .grid
            .nodes()
            .zip(&self.samples)
            .map(|(t, g)| (t.abs(), mat_norm(g)))
            .collect();
        if self.zero_index().is_some() {
            out.push((0.0, mat_norm(&self.left_at_zero)));
        }
        out
    }
}

/// `B = 1 + Σ_j |A_j| e^{c r_j}` bounds `|S(z)|` on `|Re z| <= c`.
fn series_bound(limit: &AutonomousSystem, c: f64) -> f64 {
    1.0 + limit
        .matrices
        .iter()
        .zip(&limit.delays)
        .map(|(a, &r)| mat_norm(a) * (c * r).exp())
        .sum::<f64>()
}

/// Values `(1/2π) ∫ e^{izt} F(z) dz` on `t_lo + k·dt_f`, `k < count`, by the
/// trapezoid rule on `M` frequencies with spacing `2π/(M dt_f)`, via one FFT
/// per matrix entry. Also returns the value at `t = 0` by direct summation.
fn fourier_on_grid(
    f: &dyn Fn(Complex64) -> CMat,
    contour: f64,
    n: usize,
    t_lo: f64,
    dt_f: f64,
    m: usize,
    count: usize,
) -> (Vec<Mat>, Mat) {
    let hz = 2.0 * std::f64::consts::PI / (m as f64 * dt_f);
    let mut buffers = vec![vec![Complex64::new(0.0, 0.0); m]; n * n];
    let mut at_zero = vec![Complex64::new(0.0, 0.0); n * n];
    let half = (m / 2) as i64;
    for idx in -half..half {
        let z = idx as f64 * hz;
        let val = f(Complex64::new(contour, z));
        let phase = Complex64::cis(z * t_lo);
        let slot = idx.rem_euclid(m as i64) as usize;
        for r in 0..n {
            for c in 0..n {
                let v = val[(r, c)];
                buffers[r * n + c][slot] = v * phase;
                at_zero[r * n + c] += v;
            }
        }
    }
    let fft = FftPlanner::new().plan_fft_inverse(m);
    for b in buffers.iter_mut() {
        fft.process(b);
    }
    let scale = hz / (2.0 * std::f64::consts::PI);
    let values = (0..count)
        .map(|k| Mat::from_fn(n, n, |r, c| buffers[r * n + c][k].re * scale))
        .collect();
    let zero = Mat::from_fn(n, n, |r, c| at_zero[r * n + c].re * scale);
    (values, zero)
}

/// `G₀` on `grid` by contour-shifted inverse Fourier quadrature.
///
/// `Δ⁻¹ = Σ_{k<K} S^k/(z+1)^{k+1} + X^K Δ⁻¹`; the finite sum inverts in
/// closed form, and only the `O(|z|^{-K-1})` remainder is integrated, along
/// `Re z = -a₀` for `t >= 0` and `Re z = +a₀` for `t < 0`.
pub fn green_autonomous(
    limit: &AutonomousSystem,
    a0: f64,
    grid: &UniformGrid,
    opts: GreenOptions,
) -> Result<GreenKernel> {
    if !(a0 > 0.0 && a0 < 1.0) {
        return Err(Error::Precondition(format!(
            "contour abscissa a0 = {a0} must lie in (0, 1)"
        )));
    }
    if !opts.assume_certified {
        let bound = root_window_bound(limit, a0) + 0.5;
        let count = count_roots_rectangle(limit, (-a0, a0), (-bound, bound)).map_err(|_| {
            Error::Precondition(format!("a characteristic root lies on the contour Re z = ±{a0}"))
        })?;
        if count != 0 {
            return Err(Error::Precondition(format!(
                "{count} characteristic root(s) inside the strip |Re z| <= {a0}"
            )));
        }
    }
    let n = limit.dim();
    let order = opts.order.max(1);
    let z_req = opts.z_max.unwrap_or((200.0 / a0).max(50.0)).max(50.0);
    let dt = grid.step;
    let q_sub = ((dt * z_req / std::f64::consts::PI).ceil() as usize).max(1);
    let dt_f = dt / q_sub as f64;
    let z_eff = std::f64::consts::PI / dt_f;
    // Decay rate of the contour-shifted remainder away from its support.
    let delta = (1.0 - a0).min(a0 / 9.0);
    let t_abs = grid.t_min.abs().max(grid.t_max().abs());

    let terms = explicit_terms(limit, order);
    let scalar: Option<Vec<(f64, f64)>> = (n == 1).then(|| {
        limit
            .matrices
            .iter()
            .zip(&limit.delays)
            .map(|(a, &r)| (a[(0, 0)], r))
            .collect()
    });
    let remainder = |z: Complex64| -> CMat {
        match &scalar {
            Some(coef) => CMat::from_element(1, 1, series_remainder_scalar(coef, z, order)),
            None => series_remainder(limit, z, order),
        }
    };

    let mut samples = vec![Mat::zeros(n, n); grid.len];
    let pos: Vec<usize> = (0..grid.len).filter(|&i| grid.node(i) >= 0.0).collect();
    let neg: Vec<usize> = (0..grid.len).filter(|&i| grid.node(i) < 0.0).collect();
    let mut z_step = 0.0;
    let mut remainder_at_zero = [Mat::zeros(n, n), Mat::zeros(n, n)];

    for (branch, idx, contour) in [(0usize, &pos, -a0), (1usize, &neg, a0)] {
        let (t_lo, t_hi) = match (idx.first(), idx.last()) {
            (Some(&a), Some(&b)) => (grid.node(a), grid.node(b)),
            _ => (0.0, 0.0),
        };
        let span = t_hi - t_lo;
        let period = (span + t_abs + 25.0 / delta).max(16.0 * t_abs).max(1.0);
        let m = ((period / dt_f).ceil() as usize).next_power_of_two().max(64);
        z_step = 2.0 * std::f64::consts::PI / (m as f64 * dt_f);
        let count = ((span / dt_f).round() as usize + 1).min(m);
        let (vals, zero) = fourier_on_grid(&remainder, contour, n, t_lo, dt_f, m, count);
        remainder_at_zero[branch] = zero;
        for &i in idx.iter() {
            let t = grid.node(i);
            let k = (((t - t_lo) / dt_f).round() as usize).min(count - 1);
            let shift = (contour * t).exp();
            let side = Side::Right;
            samples[i] = &vals[k] * shift + explicit_value(&terms, n, t, side);
        }
    }

    let plus_zero = explicit_value(&terms, n, 0.0, Side::Right) + &remainder_at_zero[0];
    let minus_zero = explicit_value(&terms, n, 0.0, Side::Left) + &remainder_at_zero[1];
    let jump = &plus_zero - &minus_zero;
    let jump_error = (&jump - Mat::identity(n, n)).amax();
    let left_at_zero = minus_zero;
    if let Some(i) = grid.node_index(0.0) {
        samples[i] = plus_zero;
    }

    let b = series_bound(limit, a0);
    let tail_estimate = if z_eff > 2.0 * b {
        b.powi(order as i32) / (std::f64::consts::PI * order as f64 * (z_eff - b).powi(order as i32))
    } else {
        f64::INFINITY
    };
    let mut warnings = Vec::new();
    if tail_estimate > 1e-5 {
        warnings.push(format!(
            "green: quadrature tail estimate {tail_estimate:.3e} exceeds 1e-5"
        ));
    }
    if jump_error > 1e-6 {
        warnings.push(format!("green: jump condition error {jump_error:.3e} exceeds 1e-6"));
    }
    let mut kernel = GreenKernel {
        grid: *grid,
        samples,
        left_at_zero,
        jump,
        jump_error,
        fit_k: f64::NAN,
        fit_a: f64::NAN,
        contour_a0: a0,
        z_max: z_eff,
        z_step,
        series_order: order,
        tail_estimate,
        warnings,
    };
    match fit_exponential_bound(&kernel.norm_samples()) {
        Ok((k, a)) => {
            kernel.fit_k = k;
            kernel.fit_a = a;
        }
        Err(e) => kernel.warnings.push(format!("green: {e}")),
    }
    Ok(kernel)
}

/// Convenience for scalar kernels in tests and reports.
pub fn scalar_samples(kernel: &GreenKernel) -> Vec<f64> {
    kernel.samples.iter().map(|m| m[(0, 0)]).collect()
}
