use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::forcing::Direction;
use crate::error::{Error, Result};
use crate::evolution::{adjoint_matrices, convolve_solve, Kernel};
use crate::linalg::BandedCholesky;
use crate::spectrum::is_asymptotically_hyperbolic;
use crate::system::{k_rate, shift_factor, DelaySystem, GridFunction, Mat, ShiftSign, Side, UniformGrid};

/// Truncation `[-T, T]` of the real line and the collocation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WholeLineProblem {
    pub half_width: f64,
    pub step: f64,
}

impl WholeLineProblem {
    /// `half_width` is rounded up to a whole number of steps.
    pub fn new(half_width: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid("step", format!("{step} must be positive")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("half_width", format!("{half_width} must be positive")));
        }
        let cells = (half_width / step - 1e-9).ceil().max(1.0);
        Ok(Self {
            half_width: cells * step,
            step,
        })
    }

    /// Smallest half-width keeping base times up to `|s| ≤ s_abs_max` a
    /// distance of `r_N + 20/λ` from both ends, `λ` the smaller limit gap.
    pub fn required_half_width(sys: &DelaySystem, s_abs_max: f64) -> Result<f64> {
        let (plus, minus) = is_asymptotically_hyperbolic(sys)?;
        Ok(s_abs_max + sys.max_delay() + 20.0 / plus.min(minus))
    }

    /// At least `min_half_width`, grown to [`Self::required_half_width`].
    pub fn sized(sys: &DelaySystem, s_abs_max: f64, step: f64, min_half_width: f64) -> Result<Self> {
        let need = Self::required_half_width(sys, s_abs_max)?;
        Self::new(need.max(min_half_width), step)
    }

    pub fn grid(&self) -> UniformGrid {
        let len = (2.0 * self.half_width / self.step).round() as usize + 1;
        UniformGrid::with_len(-self.half_width, self.step, len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum RowKind {
    Cell { cell: usize, comp: usize },
    SteadyLeft { comp: usize },
    SteadyRight { comp: usize },
}

#[derive(Clone, Debug)]
pub(crate) struct Row {
    pub kind: RowKind,
    pub cols: Vec<(usize, f64)>,
}

/// Sparse rows of the box (trapezoid) discretisation of `Λ` or of its
/// adjoint on a uniform grid, each cell row multiplied by the step.
#[derive(Clone, Debug)]
pub(crate) struct Collocation {
    pub grid: UniformGrid,
    pub n: usize,
    pub rows: Vec<Row>,
}

impl Collocation {
    pub fn ncols(&self) -> usize {
        self.grid.len * self.n
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.ncols());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in &row.cols {
                a[(r, c)] += v;
            }
        }
        a
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.cols.iter().map(|&(c, v)| v * x[c]).sum::<f64>()),
        )
    }

    pub fn apply_t(&self, y: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols());
        for (row, &yr) in self.rows.iter().zip(y) {
            if yr != 0.0 {
                for &(c, v) in &row.cols {
                    out[c] += v * yr;
                }
            }
        }
        out
    }

    /// Lower band of `AᵀA` with its bandwidth.
    fn normal_band(&self) -> (usize, Vec<f64>) {
        let bw = self
            .rows
            .iter()
            .filter(|r| !r.cols.is_empty())
            .map(|r| r.cols.last().unwrap().0 - r.cols[0].0)
            .max()
            .unwrap_or(0);
        let w = bw + 1;
        let mut band = vec![0.0; self.ncols() * w];
        for row in &self.rows {
            for (k, &(p, ap)) in row.cols.iter().enumerate() {
                for &(q, aq) in &row.cols[..=k] {
                    band[p * w + q + bw - p] += ap * aq;
                }
            }
        }
        (bw, band)
    }
}

/// Interpolation weights of `τ` on the grid; times beyond the ends take the
/// end node (constant extension).
fn lookup(grid: &UniformGrid, tau: f64) -> [(usize, f64); 2] {
    let last = grid.len - 1;
    let x = (tau - grid.t_min) / grid.step;
    if x <= 0.0 {
        return [(0, 1.0), (0, 0.0)];
    }
    if x >= last as f64 {
        return [(last, 1.0), (last, 0.0)];
    }
    let i = x.floor();
    let u = x - i;
    let i = i as usize;
    if u < 1e-9 {
        [(i, 1.0), (i, 0.0)]
    } else if u > 1.0 - 1e-9 {
        [(i + 1, 1.0), (i + 1, 0.0)]
    } else {
        [(i, 1.0 - u), (i + 1, u)]
    }
}

fn merge(mut cols: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    cols.sort_by_key(|&(c, _)| c);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(cols.len());
    for (c, v) in cols {
        match out.last_mut() {
            Some((lc, lv)) if *lc == c => *lv += v,
            _ => out.push((c, v)),
        }
    }
    out.retain(|&(_, v)| v != 0.0);
    out
}

/// One-sided adjoint coefficient matrices at `t`.
fn adjoint_side(sys: &DelaySystem, t: f64, side: Side) -> Vec<Mat> {
    if side == Side::Right {
        return adjoint_matrices(sys, t);
    }
    let n = sys.dim();
    sys.delays()
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let a = &sys.coefficients_side(t + r, side)[j];
            if j == 0 {
                a + Mat::identity(n, n) * k_rate(t)
            } else {
                a * shift_factor(t, r, ShiftSign::Plus)
            }
        })
        .collect()
}

pub(crate) struct CoefficientTable {
    pub right: Vec<Vec<Mat>>,
    pub left: Vec<Vec<Mat>>,
}

impl CoefficientTable {
    fn new(grid: &UniformGrid, f: impl Fn(f64, Side) -> Vec<Mat>) -> Self {
        Self {
            right: grid.nodes().map(|t| f(t, Side::Right)).collect(),
            left: grid.nodes().map(|t| f(t, Side::Left)).collect(),
        }
    }

    pub fn side(&self, i: usize, side: Side) -> &[Mat] {
        match side {
            Side::Right => &self.right[i],
            Side::Left => &self.left[i],
        }
    }
}

/// Box rows for `x' - Σ A_j x(t - r_j)` (or `-y' - Σ B_jᵀ y(t + r_j)` when
/// `adjoint`), plus steady-state rows `Σ_j A_j x = -g` at both ends.
pub(crate) fn assemble(sys: &DelaySystem, grid: &UniformGrid, adjoint: bool) -> (Collocation, CoefficientTable) {
    let n = sys.dim();
    let h = grid.step;
    let table = if adjoint {
        CoefficientTable::new(grid, |t, side| {
            adjoint_side(sys, t, side).into_iter().map(|b| b.transpose()).collect()
        })
    } else {
        CoefficientTable::new(grid, |t, side| sys.coefficients_side(t, side))
    };
    let (sign, shift) = if adjoint { (-1.0, 1.0) } else { (1.0, -1.0) };
    let last = grid.len - 1;
    let mut rows = Vec::with_capacity(grid.len * n + n);
    let steady = |node: usize, side: Side, comp: usize| -> Vec<(usize, f64)> {
        let mut cols = Vec::new();
        for a in table.side(node, side) {
            for c2 in 0..n {
                cols.push((node * n + c2, a[(comp, c2)]));
            }
        }
        merge(cols)
    };
    for comp in 0..n {
        rows.push(Row {
            kind: RowKind::SteadyLeft { comp },
            cols: steady(0, Side::Right, comp),
        });
    }
    for cell in 0..last {
        for comp in 0..n {
            let mut cols = vec![((cell + 1) * n + comp, sign), (cell * n + comp, -sign)];
            for (node, side) in [(cell, Side::Right), (cell + 1, Side::Left)] {
                let t = grid.node(node);
                for (a, &r) in table.side(node, side).iter().zip(sys.delays()) {
                    for (k, wt) in lookup(grid, t + shift * r) {
                        if wt == 0.0 {
                            continue;
                        }
                        for c2 in 0..n {
                            let v = a[(comp, c2)];
                            if v != 0.0 {
                                cols.push((k * n + c2, -0.5 * h * v * wt));
                            }
                        }
                    }
                }
            }
            rows.push(Row {
                kind: RowKind::Cell { cell, comp },
                cols: merge(cols),
            });
        }
    }
    for comp in 0..n {
        rows.push(Row {
            kind: RowKind::SteadyRight { comp },
            cols: steady(last, Side::Left, comp),
        });
    }
    (Collocation { grid: *grid, n, rows }, table)
}

/// Boundary leakage: distance of `v` from its asymptotic states over a
/// window of width `max(r_N, 1)` at each end.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeakageReport {
    pub left: f64,
    pub right: f64,
    pub limit: f64,
    pub v_sup: f64,
}

impl LeakageReport {
    pub fn max(&self) -> f64 {
        self.left.max(self.right)
    }

    pub fn ok(&self) -> bool {
        self.max() <= self.limit
    }
}

#[derive(Clone, Debug)]
pub struct WholeLineSolution {
    pub v: GridFunction,
    /// `max |(Λ v - g)(cell)|` over cells, in units of `g`.
    pub interior_residual: f64,
    pub leakage: LeakageReport,
    pub v_minus_infinity: DVector<f64>,
    pub v_plus_infinity: DVector<f64>,
    /// Sup distance to the Green-kernel solution on the middle half of the domain.
    pub green_discrepancy: Option<f64>,
    pub warnings: Vec<String>,
}

/// Factored normal equations of the whole-line collocation system, reusable
/// for any number of right-hand sides.
pub struct WholeLineSolver {
    pub(crate) sys: DelaySystem,
    pub(crate) problem: WholeLineProblem,
    pub(crate) colloc: Collocation,
    pub(crate) table: CoefficientTable,
    /// `Σ_j A_j` at `-T` and `T`.
    sum_left: Mat,
    sum_right: Mat,
    chol: BandedCholesky,
    pub warnings: Vec<String>,
}

impl WholeLineSolver {
    pub fn new(sys: &DelaySystem, problem: &WholeLineProblem) -> Result<Self> {
        let grid = problem.grid();
        let (colloc, table) = assemble(sys, &grid, false);
        let (bw, band) = colloc.normal_band();
        let chol = BandedCholesky::factor(colloc.ncols(), bw, band)?;
        let (lo, hi) = chol.pivot_range();
        if lo < 1e-8 * hi {
            return Err(Error::KernelObstruction(format!(
                "pivot ratio {:.3e} of the normal equations",
                lo / hi
            )));
        }
        let n = sys.dim();
        let sum = |ms: &[Mat]| ms.iter().fold(Mat::zeros(n, n), |acc, m| acc + m);
        let sum_left = sum(table.side(0, Side::Right));
        let sum_right = sum(table.side(grid.len - 1, Side::Left));
        let mut warnings = Vec::new();
        if let Ok(need) = WholeLineProblem::required_half_width(sys, 0.0) {
            if problem.half_width < need {
                warnings.push(format!(
                    "half-width {} is below r_N + 20/λ = {need:.3}; boundary leakage may be large",
                    problem.half_width
                ));
            }
        }
        Ok(Self {
            sys: sys.clone(),
            problem: *problem,
            colloc,
            table,
            sum_left,
            sum_right,
            chol,
            warnings,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.colloc.grid
    }

    pub fn dim(&self) -> usize {
        self.colloc.n
    }

    pub fn system(&self) -> &DelaySystem {
        &self.sys
    }

    pub fn problem(&self) -> &WholeLineProblem {
        &self.problem
    }

    pub(crate) fn nrows(&self) -> usize {
        self.colloc.rows.len()
    }

    /// Row right-hand side for a forcing sampled on the solver grid.
    pub(crate) fn rhs_from_forcing(&self, g: &GridFunction) -> Result<DVector<f64>> {
        if g.grid() != self.grid() || g.dim() != self.dim() {
            return Err(Error::Precondition(
                "forcing must live on the whole-line grid with the system dimension".into(),
            ));
        }
        let h = self.grid().step;
        let last = self.grid().len - 1;
        Ok(DVector::from_iterator(
            self.nrows(),
            self.colloc.rows.iter().map(|row| match row.kind {
                RowKind::Cell { cell, comp } => {
                    0.5 * h * (g.node_value(cell)[comp] + g.node_left_value(cell + 1)[comp])
                }
                RowKind::SteadyLeft { comp } => -g.node_value(0)[comp],
                RowKind::SteadyRight { comp } => -g.node_left_value(last)[comp],
            }),
        ))
    }

    /// Least-squares solutions for the row right-hand sides in the columns of `b`.
    pub(crate) fn solve_rows(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.colloc.ncols(), b.ncols());
        for k in 0..b.ncols() {
            let mut y = self.colloc.apply_t(b.column(k).as_slice());
            self.chol.solve_in_place(y.as_mut_slice());
            x.set_column(k, &y);
        }
        x
    }

    /// `(AᵀA)⁻¹ y` for a vector indexed like the unknowns.
    pub(crate) fn normal_solve(&self, y: &mut [f64]) {
        self.chol.solve_in_place(y);
    }

    pub(crate) fn rows(&self) -> &Collocation {
        &self.colloc
    }

    fn steady_state(&self, sum: &Mat, g: &DVector<f64>) -> DVector<f64> {
        sum.clone()
            .lu()
            .solve(&(-g))
            .unwrap_or_else(|| DVector::zeros(g.len()))
    }

    /// Leakage of the nodal solution `x` (node-major) against the end states
    /// implied by `g(-T)` and `g(T)`.
    pub(crate) fn leakage(&self, x: &[f64], g_left: &DVector<f64>, g_right: &DVector<f64>) -> (LeakageReport, DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let grid = self.grid();
        let v_minus = self.steady_state(&self.sum_left, g_left);
        let v_plus = self.steady_state(&self.sum_right, g_right);
        let window = ((self.sys.max_delay().max(1.0) / grid.step).round() as usize).min(grid.len - 1);
        let dist = |i: usize, target: &DVector<f64>| -> f64 {
            (0..n).map(|c| (x[i * n + c] - target[c]).abs()).fold(0.0, f64::max)
        };
        let left = (0..=window).map(|i| dist(i, &v_minus)).fold(0.0, f64::max);
        let last = grid.len - 1;
        let right = (last - window..=last).map(|i| dist(i, &v_plus)).fold(0.0, f64::max);
        let v_sup = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let limit = 1e-4 * v_sup + 1e-14;
        (LeakageReport { left, right, limit, v_sup }, v_minus, v_plus)
    }

    /// Solve `Λ v = g` for one forcing.
    pub fn solve(&self, g: &GridFunction) -> Result<WholeLineSolution> {
        let b = self.rhs_from_forcing(g)?;
        let x = self.solve_rows(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
        let x = x.column(0);
        let n = self.dim();
        let grid = *self.grid();
        let last = grid.len - 1;
        let (leakage, v_minus, v_plus) = self.leakage(x.as_slice(), &g.node_value(0), &g.node_left_value(last));
        if !leakage.ok() {
            return Err(Error::DomainTooSmall {
                leakage: leakage.max(),
                limit: leakage.limit,
            });
        }
        let ax = self.colloc.apply(x.as_slice());
        let h = grid.step;
        let interior_residual = self
            .colloc
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r.kind, RowKind::Cell { .. }))
            .map(|(k, _)| (ax[k] - b[k]).abs() / h)
            .fold(0.0, f64::max);
        let values = DMatrix::from_column_slice(n, grid.len, x.as_slice());
        Ok(WholeLineSolution {
            v: GridFunction::new(grid, values)?,
            interior_residual,
            leakage,
            v_minus_infinity: v_minus,
            v_plus_infinity: v_plus,
            green_discrepancy: None,
            warnings: self.warnings.clone(),
        })
    }
}

/// Bounded solution of `Λ v = g` on the truncated line.
pub fn solve_whole_line(sys: &DelaySystem, g: &GridFunction, problem: &WholeLineProblem) -> Result<WholeLineSolution> {
    is_asymptotically_hyperbolic(sys)?;
    WholeLineSolver::new(sys, problem)?.solve(g)
}

/// Compare a whole-line solution with the Green-kernel solution `G * g` on
/// the middle half of the domain, where truncation of the convolution is
/// negligible, and record the sup distance.
pub fn green_cross_check(
    sys: &DelaySystem,
    g: &GridFunction,
    solution: &mut WholeLineSolution,
    kernel: Kernel<'_>,
) -> Result<f64> {
    let report = convolve_solve(sys, kernel, g)?;
    let grid = g.grid();
    let quarter = grid.len / 4;
    let mut worst = 0.0f64;
    for i in quarter..grid.len - quarter {
        let d = (report.x.node_value(i) - solution.v.node_value(i)).amax();
        worst = worst.max(d);
    }
    solution.green_discrepancy = Some(worst);
    Ok(worst)
}

/// Active-side test for the forcing of a history placed at `s`.
pub(crate) fn forcing_active(direction: Direction, t: f64, s: f64, side: Side) -> bool {
    match direction {
        Direction::Forward => t > s || (t == s && side == Side::Right),
        Direction::Backward => t < s || (t == s && side == Side::Left),
    }
}
