use nalgebra::{DMatrix, DVector};

use super::history::{hermite, hermite_du, HistorySegment};
use crate::error::{Error, Result};
use crate::system::{DelaySystem, Extension, GridFunction, Side};

#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    /// Step used when the system has no positive delay.
    pub ode_step: f64,
    /// Norm beyond which the integration is abandoned.
    pub blow_up: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            ode_step: 1.0 / 64.0,
            blow_up: 1e12,
        }
    }
}

/// Dense solution on `[s - r, t_end]` for a batch of `p` initial histories
/// (state `n × p`).
///
/// Nodes are `t0 + k·step`. Each cell carries its end derivatives, and the
/// dense output is the cubic Hermite interpolant of values and derivatives.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub start: f64,
    pub end: f64,
    pub t0: f64,
    pub step: f64,
    pub span: f64,
    /// Integrator cells per history cell.
    pub substeps: usize,
    hist_m: usize,
    nodes: Vec<DMatrix<f64>>,
    dl: Vec<DMatrix<f64>>,
    dr: Vec<DMatrix<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.nodes[0].nrows()
    }

    pub fn batch(&self) -> usize {
        self.nodes[0].ncols()
    }

    pub fn node_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.node_time(self.nodes.len() - 1)
    }

    fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.step;
        let k = x.round();
        ((x - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < self.nodes.len()).then_some(k as usize)
    }

    /// `x(t)` as an `n × p` matrix; `t` must lie in `[t0, last node]`.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        let tol = 1e-9 * self.step;
        if t < self.t0 - tol || t > self.last_time() + tol {
            return Err(Error::Domain(format!(
                "t = {t} outside trajectory [{}, {}]",
                self.t0,
                self.last_time()
            )));
        }
        Ok(self.lookup(t))
    }

    fn lookup(&self, t: f64) -> DMatrix<f64> {
        if let Some(k) = self.node_index(t) {
            return self.nodes[k].clone();
        }
        let x = ((t - self.t0) / self.step).max(0.0);
        let c = (x.floor() as usize).min(self.nodes.len().saturating_sub(2));
        let u = x - c as f64;
        self.hermite_cell(c, u)
    }

    fn hermite_cell(&self, c: usize, u: f64) -> DMatrix<f64> {
        let h = self.step;
        let u2 = u * u;
        let u3 = u2 * u;
        let w0 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let w1 = (u3 - 2.0 * u2 + u) * h;
        let w2 = -2.0 * u3 + 3.0 * u2;
        let w3 = (u3 - u2) * h;
        &self.nodes[c] * w0 + &self.dl[c] * w1 + &self.nodes[c + 1] * w2 + &self.dr[c] * w3
    }

    /// Column `col` of `x(t)`.
    pub fn value(&self, t: f64, col: usize) -> Result<DVector<f64>> {
        Ok(self.eval(t)?.column(col).into_owned())
    }

    /// `(t_k, x(t_k))` at every node from `start` on, first batch column.
    pub fn samples(&self) -> Vec<(f64, DVector<f64>)> {
        let k0 = ((self.start - self.t0) / self.step).round() as usize;
        (k0..self.nodes.len())
            .filter(|&k| self.node_time(k) <= self.end + 1e-9 * self.step)
            .map(|k| (self.node_time(k), self.nodes[k].column(0).into_owned()))
            .collect()
    }

    /// Node values of `x_τ` at `m + 1` points, stacked node-major:
    /// row `i·n + c` is component `c` at `θ_i`.
    pub fn segment_matrix(&self, tau: f64, m: usize) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let p = self.batch();
        let m = if self.span == 0.0 { 0 } else { m };
        self.eval(tau)?;
        if tau < self.start - 1e-9 * self.step {
            return Err(Error::Domain(format!("τ = {tau} before start {}", self.start)));
        }
        let mut out = DMatrix::zeros((m + 1) * n, p);
        for i in 0..=m {
            let theta = if m == 0 { 0.0 } else { -self.span + self.span * i as f64 / m as f64 };
            let v = self.lookup(tau + theta);
            out.view_mut((i * n, 0), (n, p)).copy_from(&v);
        }
        Ok(out)
    }

    /// `x_τ` for batch column `col`. When `τ` is a node and the history grid
    /// coincides with the integrator grid the cell slopes are carried over,
    /// so that restarting from the segment reproduces this trajectory.
    pub fn segment(&self, tau: f64, m: usize, col: usize) -> Result<HistorySegment> {
        let n = self.dim();
        let stacked = self.segment_matrix(tau, m)?;
        let m = stacked.nrows() / n - 1;
        let values = DMatrix::from_column_slice(n, m + 1, stacked.column(col).as_slice());
        let seg = HistorySegment::new(tau, self.span, values)?;
        if let Some(k) = self.node_index(tau - self.span) {
            if m > 0 && m == self.hist_m && self.substeps == 1 {
                let mut left = DMatrix::zeros(n, m);
                let mut right = DMatrix::zeros(n, m);
                for i in 0..m {
                    left.set_column(i, &self.dl[k + i].column(col));
                    right.set_column(i, &self.dr[k + i].column(col));
                }
                return Ok(seg.with_slopes(left, right));
            }
        }
        Ok(seg)
    }
}

/// Stacked initial data for a batch integration.
pub(crate) struct BatchHistory {
    pub span: f64,
    pub m: usize,
    /// `m + 1` node values, each `n × p`.
    pub nodes: Vec<DMatrix<f64>>,
    /// Per-cell end slopes, each `n × p`.
    pub slopes: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)>,
}

impl BatchHistory {
    pub fn single(phi: &HistorySegment) -> Self {
        let n = phi.dim();
        let m = phi.m();
        let nodes = (0..=m)
            .map(|i| DMatrix::from_column_slice(n, 1, phi.values().column(i).as_slice()))
            .collect();
        let slopes = phi.has_slopes().then(|| {
            let mut l = Vec::with_capacity(m);
            let mut r = Vec::with_capacity(m);
            for i in 0..m {
                let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(|c| phi.cell_slopes(i, c)).unzip();
                l.push(DMatrix::from_column_slice(n, 1, &a));
                r.push(DMatrix::from_column_slice(n, 1, &b));
            }
            (l, r)
        });
        Self {
            span: phi.span(),
            m,
            nodes,
            slopes,
        }
    }

    /// The nodal hat basis: column `i·n + c` is the hat at node `i`, component `c`.
    pub fn hat_basis(n: usize, span: f64, m: usize) -> Self {
        let m = if span == 0.0 { 0 } else { m };
        let p = (m + 1) * n;
        let nodes = (0..=m)
            .map(|i| {
                let mut b = DMatrix::zeros(n, p);
                for c in 0..n {
                    b[(c, i * n + c)] = 1.0;
                }
                b
            })
            .collect();
        Self {
            span,
            m,
            nodes,
            slopes: None,
        }
    }

    /// Arbitrary stacked histories, one per column of `stacked`.
    pub fn from_stacked(n: usize, span: f64, stacked: &DMatrix<f64>) -> Self {
        let m = stacked.nrows() / n - 1;
        let nodes = (0..=m)
            .map(|i| stacked.view((i * n, 0), (n, stacked.ncols())).into_owned())
            .collect();
        Self {
            span,
            m,
            nodes,
            slopes: None,
        }
    }
}

fn rhs(
    sys: &DelaySystem,
    traj: &Trajectory,
    t: f64,
    state: &DMatrix<f64>,
    side: Side,
    forcing: Option<&GridFunction>,
) -> Result<DMatrix<f64>> {
    let coeffs = sys.coefficients_side(t, side);
    let mut out = DMatrix::zeros(state.nrows(), state.ncols());
    for (a, &r) in coeffs.iter().zip(sys.delays()) {
        if a.iter().all(|x| *x == 0.0) {
            continue;
        }
        if r == 0.0 {
            out += a * state;
        } else {
            out += a * traj.lookup(t - r);
        }
    }
    if let Some(f) = forcing {
        let v = f.eval_side(t, side)?;
        for mut col in out.column_iter_mut() {
            col += &v;
        }
    }
    Ok(out)
}

fn rk4_step(
    sys: &DelaySystem,
    traj: &Trajectory,
    a: f64,
    b: f64,
    x: &DMatrix<f64>,
    forcing: Option<&GridFunction>,
) -> Result<DMatrix<f64>> {
    let h = b - a;
    let mid = a + 0.5 * h;
    let k1 = rhs(sys, traj, a, x, Side::Right, forcing)?;
    let k2 = rhs(sys, traj, mid, &(x + &k1 * (0.5 * h)), Side::Right, forcing)?;
    let k3 = rhs(sys, traj, mid, &(x + &k2 * (0.5 * h)), Side::Right, forcing)?;
    let k4 = rhs(sys, traj, b, &(x + &k3 * h), Side::Left, forcing)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Integrator step for a history with `m` cells: the history spacing, split
/// further if the smallest positive delay is shorter.
pub fn integrator_step(sys: &DelaySystem, m: usize, opts: &IntegratorOptions) -> (f64, usize) {
    let span = sys.max_delay();
    if span == 0.0 || m == 0 {
        return (opts.ode_step, 1);
    }
    let spacing = span / m as f64;
    let r1 = sys.min_positive_delay().unwrap_or(span);
    let q = ((spacing / r1) - 1e-12).ceil().max(1.0) as usize;
    (spacing / q as f64, q)
}

pub(crate) fn integrate_batch(
    sys: &DelaySystem,
    s: f64,
    init: &BatchHistory,
    t_end: f64,
    forcing: Option<&GridFunction>,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if !(s.is_finite() && t_end.is_finite()) {
        return Err(Error::Domain("integration bounds must be finite".into()));
    }
    if t_end < s {
        return Err(Error::Domain(format!("t_end {t_end} precedes start {s}")));
    }
    let span = sys.max_delay();
    if (init.span - span).abs() > 1e-12 * span.max(1.0) {
        return Err(Error::Domain(format!(
            "history span {} does not match the largest delay {span}",
            init.span
        )));
    }
    if let Some(f) = forcing {
        let g = f.grid();
        if f.extension() == Extension::None && !(g.contains(s) && g.contains(t_end)) {
            return Err(Error::Domain(format!(
                "forcing grid [{}, {}] does not cover [{s}, {t_end}]",
                g.t_min,
                g.t_max()
            )));
        }
    }
    let (step, q) = integrator_step(sys, init.m, opts);
    let n = sys.dim();
    let p = init.nodes[0].ncols();
    let t0 = s - span;
    let hist_cells = init.m * q;

    let mut traj = Trajectory {
        start: s,
        end: t_end,
        t0,
        step,
        span,
        substeps: q,
        hist_m: init.m,
        nodes: Vec::new(),
        dl: Vec::new(),
        dr: Vec::new(),
    };
    // Lay the initial history onto the integrator grid.
    if init.m == 0 {
        traj.nodes.push(init.nodes[0].clone());
    } else {
        let spacing = span / init.m as f64;
        for k in 0..=hist_cells {
            let (i, sub) = (k / q, k % q);
            if sub == 0 {
                traj.nodes.push(init.nodes[i].clone());
            } else {
                let u = sub as f64 / q as f64;
                traj.nodes.push(hist_value(init, i, u, spacing, n, p));
            }
        }
        for k in 0..hist_cells {
            let (i, sub) = (k / q, k % q);
            let u0 = sub as f64 / q as f64;
            let u1 = (sub + 1) as f64 / q as f64;
            traj.dl.push(hist_slope(init, i, u0, spacing, n, p));
            traj.dr.push(hist_slope(init, i, u1, spacing, n, p));
        }
    }

    let mut breaks: Vec<f64> = sys.breakpoints();
    if let Some(f) = forcing {
        breaks.extend(f.jump_times());
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let steps = (((t_end - s) / step) - 1e-9).ceil().max(0.0) as usize;
    for k in 0..steps {
        let a = s + k as f64 * step;
        let b = s + (k + 1) as f64 * step;
        let x = traj.nodes.last().unwrap().clone();
        let tol = 1e-9 * step;
        let inner: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|&t| t > a + tol && t < b - tol)
            .collect();
        let dl = rhs(sys, &traj, a, &x, Side::Right, forcing)?;
        let mut y = x;
        let mut left = a;
        for &t in inner.iter().chain(std::iter::once(&b)) {
            y = rk4_step(sys, &traj, left, t, &y, forcing)?;
            left = t;
        }
        let norm = y.amax();
        if !norm.is_finite() || norm > opts.blow_up {
            return Err(Error::BlowUp { t: b, norm });
        }
        // `dr` needs `y` at `b` for the undelayed term; push it first.
        traj.nodes.push(y.clone());
        traj.dl.push(dl);
        let placeholder = DMatrix::zeros(n, p);
        traj.dr.push(placeholder);
        let dr = rhs(sys, &traj, b, &y, Side::Left, forcing)?;
        *traj.dr.last_mut().unwrap() = dr;
    }
    Ok(traj)
}

fn hist_value(init: &BatchHistory, i: usize, u: f64, spacing: f64, n: usize, p: usize) -> DMatrix<f64> {
    let (y0, y1) = (&init.nodes[i], &init.nodes[i + 1]);
    DMatrix::from_fn(n, p, |r, c| {
        let (d0, d1) = cell_slope(init, i, r, c, spacing);
        hermite(u, y0[(r, c)], y1[(r, c)], d0 * spacing, d1 * spacing)
    })
}

fn hist_slope(init: &BatchHistory, i: usize, u: f64, spacing: f64, n: usize, p: usize) -> DMatrix<f64> {
    let (y0, y1) = (&init.nodes[i], &init.nodes[i + 1]);
    DMatrix::from_fn(n, p, |r, c| {
        let (d0, d1) = cell_slope(init, i, r, c, spacing);
        hermite_du(u, y0[(r, c)], y1[(r, c)], d0 * spacing, d1 * spacing) / spacing
    })
}

fn cell_slope(init: &BatchHistory, i: usize, r: usize, c: usize, spacing: f64) -> (f64, f64) {
    match &init.slopes {
        Some((l, rr)) => (l[i][(r, c)], rr[i][(r, c)]),
        None => {
            let s = (init.nodes[i + 1][(r, c)] - init.nodes[i][(r, c)]) / spacing;
            (s, s)
        }
    }
}

/// Solve `x' = Σ_j A_j(t) x(t - r_j) + h(t)` from `x_s = φ` up to `t_end`.
pub fn integrate(
    sys: &DelaySystem,
    s: f64,
    phi: &HistorySegment,
    t_end: f64,
    forcing: Option<&GridFunction>,
) -> Result<Trajectory> {
    integrate_with(sys, s, phi, t_end, forcing, &IntegratorOptions::default())
}

pub fn integrate_with(
    sys: &DelaySystem,
    s: f64,
    phi: &HistorySegment,
    t_end: f64,
    forcing: Option<&GridFunction>,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    if phi.dim() != sys.dim() {
        return Err(Error::Domain(format!(
            "history dimension {} differs from system dimension {}",
            phi.dim(),
            sys.dim()
        )));
    }
    integrate_batch(sys, s, &BatchHistory::single(phi), t_end, forcing, opts)
}

/// `T(t, s) φ = x_t`.
pub fn solution_operator(sys: &DelaySystem, s: f64, t: f64, phi: &HistorySegment) -> Result<HistorySegment> {
    if t == s {
        let mut out = phi.clone();
        out.base_time = s;
        return Ok(out);
    }
    let traj = integrate(sys, s, phi, t, None)?;
    traj.segment(t, phi.m(), 0)
}

/// Nodal matrix of `T(t, s)`: column `i·n + c` is the image of the hat
/// history at node `i`, component `c`.
pub fn operator_matrix(sys: &DelaySystem, s: f64, t: f64, m: usize) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let init = BatchHistory::hat_basis(n, sys.max_delay(), m);
    if t == s {
        let d = (init.m + 1) * n;
        return Ok(DMatrix::identity(d, d));
    }
    let traj = integrate_batch(sys, s, &init, t, None, &IntegratorOptions::default())?;
    traj.segment_matrix(t, init.m)
}

/// Trajectory of all nodal hat histories started at `s`.
pub fn operator_trajectory(sys: &DelaySystem, s: f64, t_end: f64, m: usize) -> Result<Trajectory> {
    let init = BatchHistory::hat_basis(sys.dim(), sys.max_delay(), m);
    integrate_batch(sys, s, &init, t_end, None, &IntegratorOptions::default())
}

/// Trajectory of arbitrary stacked histories (one per column) started at `s`.
pub fn batch_trajectory(
    sys: &DelaySystem,
    s: f64,
    stacked: &DMatrix<f64>,
    t_end: f64,
) -> Result<Trajectory> {
    let init = BatchHistory::from_stacked(sys.dim(), sys.max_delay(), stacked);
    integrate_batch(sys, s, &init, t_end, None, &IntegratorOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{AutonomousSystem, Mat, UniformGrid};

    fn scalar(delays: &[f64], coef: &[f64]) -> DelaySystem {
        DelaySystem::autonomous(&AutonomousSystem::scalar(delays, coef).unwrap())
    }

    #[test]
    fn scalar_ode_decay() {
        let sys = scalar(&[0.0], &[-1.0]);
        let phi = HistorySegment::constant(0.0, 0.0, 0, &DVector::from_element(1, 1.0)).unwrap();
        let traj = integrate(&sys, 0.0, &phi, 1.0, None).unwrap();
        let x = traj.value(1.0, 0).unwrap()[0];
        assert!((x - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn delayed_polynomials() {
        let sys = scalar(&[0.0, 1.0], &[0.0, -1.0]);
        let phi = HistorySegment::constant(0.0, 1.0, 64, &DVector::from_element(1, 1.0)).unwrap();
        let traj = integrate(&sys, 0.0, &phi, 2.0, None).unwrap();
        for k in 0..=40 {
            let t = k as f64 * 0.05;
            let want = if t <= 1.0 { 1.0 - t } else { 1.0 - t + (t - 1.0).powi(2) / 2.0 };
            assert!((traj.value(t, 0).unwrap()[0] - want).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn forced_ode() {
        let sys = scalar(&[0.0], &[-1.0]);
        let phi = HistorySegment::constant(0.0, 0.0, 0, &DVector::zeros(1)).unwrap();
        let grid = UniformGrid::new(0.0, 3.0, 1.0 / 64.0).unwrap();
        let h = GridFunction::scalar_fn(grid, |_| 1.0).unwrap();
        let traj = integrate(&sys, 0.0, &phi, 3.0, Some(&h)).unwrap();
        for (t, x) in traj.samples() {
            assert!((x[0] - (1.0 - (-t).exp())).abs() < 1e-9);
        }
        let short = GridFunction::scalar_fn(UniformGrid::new(0.0, 1.0, 0.1).unwrap(), |_| 1.0).unwrap();
        assert!(matches!(
            integrate(&sys, 0.0, &phi, 3.0, Some(&short)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn blow_up_is_detected() {
        let sys = scalar(&[0.0], &[40.0]);
        let phi = HistorySegment::constant(0.0, 0.0, 0, &DVector::from_element(1, 1.0)).unwrap();
        assert!(matches!(
            integrate(&sys, 0.0, &phi, 5.0, None),
            Err(Error::BlowUp { .. })
        ));
    }

    #[test]
    fn identity_at_equal_times() {
        let sys = scalar(&[0.0, 1.0], &[-1.0, 0.5]);
        assert_eq!(operator_matrix(&sys, 0.0, 0.0, 16).unwrap(), DMatrix::identity(17, 17));
        let phi = HistorySegment::from_fn(0.0, 1.0, 16, 1, |t| DVector::from_element(1, t.sin())).unwrap();
        assert_eq!(solution_operator(&sys, 0.0, 0.0, &phi).unwrap(), phi);
    }

    #[test]
    fn saddle_decouples() {
        let a0 = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let lim = AutonomousSystem::new(vec![0.0, 1.0], vec![a0, Mat::zeros(2, 2)]).unwrap();
        let sys = DelaySystem::autonomous(&lim);
        let phi = HistorySegment::constant(0.0, 1.0, 64, &DVector::from_element(2, 1.0)).unwrap();
        let traj = integrate(&sys, 0.0, &phi, 3.0, None).unwrap();
        let x = traj.value(3.0, 0).unwrap();
        assert!((x[0] - (-3f64).exp()).abs() < 1e-8);
        assert!((x[1] / 3f64.exp() - 1.0).abs() < 1e-8);
    }
}
