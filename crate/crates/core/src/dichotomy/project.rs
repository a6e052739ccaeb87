use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::whole_line::{forcing_active, LeakageReport, RowKind, WholeLineProblem, WholeLineSolver};
use super::Direction;
use crate::error::{Error, Result};
use crate::evolution::HistorySegment;
use crate::linalg::inf_norm;
use crate::spectrum::is_asymptotically_hyperbolic;
use crate::system::{DelaySystem, Side};

/// Splitting `φ = Pφ + Qφ` of a single history.
#[derive(Clone, Debug)]
pub struct Projection {
    pub p: HistorySegment,
    pub q: HistorySegment,
    pub leakage: LeakageReport,
}

/// Nodal matrix of `P(s)` acting on histories with `m` cells.
#[derive(Clone, Debug, Serialize)]
pub struct ProjectorMatrix {
    pub s: f64,
    pub m: usize,
    #[serde(skip)]
    pub p: DMatrix<f64>,
    /// `‖P² - P‖_∞` (nodal sup-norm induced).
    pub idempotence: f64,
    pub trace: f64,
    pub rank_p: usize,
    pub rank_q: usize,
    /// `‖P‖_∞`.
    pub norm: f64,
}

/// Rank of a near-projector: its nonzero singular values are at least one.
pub(crate) fn projector_rank(m: &DMatrix<f64>) -> usize {
    m.clone()
        .singular_values()
        .iter()
        .filter(|&&s| s > 0.5)
        .count()
}

/// Rows `θ`-interpolated from stacked nodal histories (node-major).
fn stacked_at(stacked: &DMatrix<f64>, n: usize, span: f64, theta: f64) -> DMatrix<f64> {
    let m = stacked.nrows() / n - 1;
    if m == 0 {
        return stacked.rows(0, n).into_owned();
    }
    let x = ((theta + span) / (span / m as f64)).clamp(0.0, m as f64);
    let i = (x.floor() as usize).min(m - 1);
    let u = x - i as f64;
    if u < 1e-12 {
        return stacked.rows(i * n, n).into_owned();
    }
    stacked.rows(i * n, n) * (1.0 - u) + stacked.rows((i + 1) * n, n) * u
}

impl WholeLineSolver {
    /// `g(t) = L(t) ψ_t` (forward, zero before `s`) at node `i` for stacked histories.
    fn history_forcing(&self, s: f64, span: f64, stacked: &DMatrix<f64>, i: usize, side: Side) -> DMatrix<f64> {
        let n = self.dim();
        let t = self.grid().node(i);
        let p = stacked.ncols();
        if !forcing_active(Direction::Forward, t, s, side) {
            return DMatrix::zeros(n, p);
        }
        let mut g = DMatrix::zeros(n, p);
        for (a, &r) in self.table.side(i, side).iter().zip(self.sys.delays()) {
            let theta = (t - r - s).clamp(-span, 0.0);
            g += a * stacked_at(stacked, n, span, theta);
        }
        g
    }

    /// Row right-hand sides of the forward forcing for each stacked history.
    fn history_rhs(&self, s: f64, span: f64, stacked: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let p = stacked.ncols();
        let grid = *self.grid();
        let h = grid.step;
        let last = grid.len - 1;
        let mut b = DMatrix::zeros(self.nrows(), p);
        let first_active = grid.node_index(s).unwrap_or(0);
        let mut g_right_end = DMatrix::zeros(n, p);
        let mut cells: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for cell in first_active.saturating_sub(1)..last {
            let gl = self.history_forcing(s, span, stacked, cell, Side::Right);
            let gr = self.history_forcing(s, span, stacked, cell + 1, Side::Left);
            if cell + 1 == last {
                g_right_end = gr.clone();
            }
            cells.push((cell, (gl + gr) * (0.5 * h)));
        }
        let offset = first_active.saturating_sub(1);
        for (k, row) in self.rows().rows.iter().enumerate() {
            match row.kind {
                RowKind::Cell { cell, comp } if cell >= offset => {
                    b.row_mut(k).copy_from(&cells[cell - offset].1.row(comp));
                }
                RowKind::SteadyRight { comp } => {
                    b.row_mut(k).copy_from(&(-g_right_end.row(comp)));
                }
                _ => {}
            }
        }
        (b, g_right_end)
    }

    /// `P(s) X` for stacked histories `X` (`(m+1)n × p`, span `r_N`), with the
    /// worst boundary leakage among the columns.
    pub fn apply_projector(&self, s: f64, stacked: &DMatrix<f64>) -> Result<(DMatrix<f64>, LeakageReport)> {
        let n = self.dim();
        let span = self.sys.max_delay();
        let grid = *self.grid();
        if grid.node_index(s).is_none() {
            return Err(Error::Domain(format!(
                "base time {s} is not a node of the whole-line grid (step {})",
                grid.step
            )));
        }
        if s - span < grid.t_min || s > grid.t_max() {
            return Err(Error::Domain(format!("base time {s} too close to the domain ends")));
        }
        if !stacked.nrows().is_multiple_of(n) || stacked.nrows() < n {
            return Err(Error::Domain("stacked history rows are not a multiple of n".into()));
        }
        let m = stacked.nrows() / n - 1;
        let (b, g_end) = self.history_rhs(s, span, stacked);
        let x = self.solve_rows(&b);
        let zero = DVector::zeros(n);
        let mut worst: Option<LeakageReport> = None;
        for k in 0..x.ncols() {
            let (leak, _, _) = self.leakage(x.column(k).as_slice(), &zero, &g_end.column(k).into_owned());
            let ratio = leak.max() / leak.limit;
            if worst.as_ref().is_none_or(|w| ratio > w.max() / w.limit) {
                worst = Some(leak);
            }
        }
        let worst = worst.unwrap_or(LeakageReport {
            left: 0.0,
            right: 0.0,
            limit: 1e-14,
            v_sup: 0.0,
        });
        if !worst.ok() {
            return Err(Error::DomainTooSmall {
                leakage: worst.max(),
                limit: worst.limit,
            });
        }
        let mut out = stacked.clone();
        for node in 0..=m {
            let theta = if m == 0 { 0.0 } else { -span + span * node as f64 / m as f64 };
            let t = s + theta;
            let xg = (t - grid.t_min) / grid.step;
            let i = (xg.floor() as usize).min(grid.len - 2);
            let u = (xg - i as f64).clamp(0.0, 1.0);
            for c in 0..n {
                let lo = x.row(i * n + c);
                let hi = x.row((i + 1) * n + c);
                let v = if u < 1e-9 {
                    lo.into_owned()
                } else if u > 1.0 - 1e-9 {
                    hi.into_owned()
                } else {
                    lo * (1.0 - u) + hi * u
                };
                let mut r = out.row_mut(node * n + c);
                r += v;
            }
        }
        Ok((out, worst))
    }

    pub fn project(&self, s: f64, phi: &HistorySegment) -> Result<Projection> {
        if phi.dim() != self.dim() {
            return Err(Error::Domain("history dimension differs from the system".into()));
        }
        let span = self.sys.max_delay();
        if (phi.span() - span).abs() > 1e-12 * span.max(1.0) {
            return Err(Error::Domain(format!(
                "history span {} differs from r_N = {span}",
                phi.span()
            )));
        }
        let x = phi.linear().to_vector();
        let stacked = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let (px, leakage) = self.apply_projector(s, &stacked)?;
        let pv = px.column(0).into_owned();
        let qv = &x - &pv;
        Ok(Projection {
            p: HistorySegment::from_vector(s, span, self.dim(), &pv)?,
            q: HistorySegment::from_vector(s, span, self.dim(), &qv)?,
            leakage,
        })
    }

    pub fn projector_matrix(&self, s: f64, m: usize) -> Result<ProjectorMatrix> {
        let m = if self.sys.max_delay() == 0.0 { 0 } else { m };
        let d = (m + 1) * self.dim();
        let (p, _) = self.apply_projector(s, &DMatrix::identity(d, d))?;
        Ok(summarize(s, m, p))
    }
}

pub(crate) fn summarize(s: f64, m: usize, p: DMatrix<f64>) -> ProjectorMatrix {
    let d = p.nrows();
    let idempotence = inf_norm(&(&p * &p - &p));
    let rank_p = projector_rank(&p);
    let rank_q = projector_rank(&(DMatrix::identity(d, d) - &p));
    ProjectorMatrix {
        s,
        m,
        idempotence,
        trace: p.trace(),
        rank_p,
        rank_q,
        norm: inf_norm(&p),
        p,
    }
}

/// `(Pφ, Qφ)` with `Pφ = v_s + φ` from the forward whole-line solve.
pub fn project(sys: &DelaySystem, s: f64, phi: &HistorySegment, problem: &WholeLineProblem) -> Result<Projection> {
    is_asymptotically_hyperbolic(sys)?;
    WholeLineSolver::new(sys, problem)?.project(s, phi)
}

pub fn projector_matrix(sys: &DelaySystem, s: f64, m: usize, problem: &WholeLineProblem) -> Result<ProjectorMatrix> {
    is_asymptotically_hyperbolic(sys)?;
    WholeLineSolver::new(sys, problem)?.projector_matrix(s, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{AutonomousSystem, Mat};

    fn saddle() -> DelaySystem {
        let a0 = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        DelaySystem::autonomous(&AutonomousSystem::new(vec![0.0, 1.0], vec![a0, Mat::zeros(2, 2)]).unwrap())
    }

    #[test]
    fn stable_scalar_is_identity() {
        let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap());
        let p = WholeLineProblem::new(25.0, 1.0 / 64.0).unwrap();
        let pm = projector_matrix(&sys, 0.0, 64, &p).unwrap();
        assert_eq!(pm.p.shape(), (1, 1));
        assert!((pm.p[(0, 0)] - 1.0).abs() < 1e-3);
        assert_eq!((pm.rank_p, pm.rank_q), (1, 0));
    }

    #[test]
    fn saddle_splitting() {
        let sys = saddle();
        let problem = WholeLineProblem::new(30.0, 1.0 / 64.0).unwrap();
        let solver = WholeLineSolver::new(&sys, &problem).unwrap();
        let phi = HistorySegment::from_fn(0.0, 1.0, 64, 2, |t| DVector::from_vec(vec![0.0, t.exp()])).unwrap();
        let split = solver.project(0.0, &phi).unwrap();
        assert!(split.p.sup_norm() <= 1e-3, "{}", split.p.sup_norm());
        let back = split.p.add(&split.q).unwrap();
        assert_eq!(back.values(), phi.values());
        let pm = solver.projector_matrix(0.0, 16).unwrap();
        assert!(pm.idempotence < 1e-3, "{}", pm.idempotence);
        assert_eq!(pm.rank_q, 1);
        assert_eq!(pm.rank_p, 2 * 17 - 1);
        assert!((pm.trace - (2.0 * 17.0 - 1.0)).abs() < 1e-2);
    }
}
