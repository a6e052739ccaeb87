use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::weight::omega;
use super::Side;
use crate::error::{Error, Result};

/// Nodes `t_min + i·step`, `i = 0..len`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub t_min: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    /// Grid of `⌊(t_max - t_min)/step⌋ + 1` nodes starting at `t_min`.
    pub fn new(t_min: f64, t_max: f64, step: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite() && step.is_finite()) {
            return Err(Error::Domain("grid bounds must be finite".into()));
        }
        if step <= 0.0 {
            return Err(Error::Domain(format!("grid step must be positive, got {step}")));
        }
        if t_max < t_min {
            return Err(Error::Domain(format!("empty grid: t_max {t_max} < t_min {t_min}")));
        }
        let len = ((t_max - t_min) / step + 1e-9).floor() as usize + 1;
        Ok(Self { t_min, step, len })
    }

    pub fn with_len(t_min: f64, step: f64, len: usize) -> Self {
        Self { t_min, step, len }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.step
    }

    pub fn t_max(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.node(i))
    }

    /// Index of the nearest node if `t` is within `1e-9·step` of it.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_min) / self.step;
        let i = x.round();
        if (x - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.len {
            Some(i as usize)
        } else {
            None
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        let tol = 1e-9 * self.step;
        t >= self.t_min - tol && t <= self.t_max() + tol
    }
}

/// Behaviour of [`GridFunction::eval`] outside the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    None,
    Zero,
    ConstantTail,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Norm {
    Lp(u32),
    Sup,
}

/// Piecewise-linear vector function on a uniform grid.
///
/// Values are stored column-wise (`n × len`). A node may carry a separate
/// left limit, which makes the interpolant jump there.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: UniformGrid,
    values: DMatrix<f64>,
    extension: Extension,
    left_limits: BTreeMap<usize, DVector<f64>>,
}

impl GridFunction {
    pub fn new(grid: UniformGrid, values: DMatrix<f64>) -> Result<Self> {
        if grid.len == 0 {
            return Err(Error::Domain("empty grid".into()));
        }
        if values.ncols() != grid.len {
            return Err(Error::Domain(format!(
                "expected {} samples, got {}",
                grid.len,
                values.ncols()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("grid function has non-finite samples".into()));
        }
        Ok(Self {
            grid,
            values,
            extension: Extension::None,
            left_limits: BTreeMap::new(),
        })
    }

    pub fn zeros(grid: UniformGrid, dim: usize) -> Self {
        Self {
            grid,
            values: DMatrix::zeros(dim, grid.len),
            extension: Extension::None,
            left_limits: BTreeMap::new(),
        }
    }

    pub fn from_fn(grid: UniformGrid, dim: usize, mut f: impl FnMut(f64) -> DVector<f64>) -> Result<Self> {
        let mut values = DMatrix::zeros(dim, grid.len);
        for i in 0..grid.len {
            values.set_column(i, &f(grid.node(i)));
        }
        Self::new(grid, values)
    }

    pub fn scalar_fn(grid: UniformGrid, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, |t| DVector::from_element(1, f(t)))
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }

    /// Attach a left limit at node `i`, differing from the stored node value.
    pub fn with_left_limit(mut self, i: usize, value: DVector<f64>) -> Self {
        self.left_limits.insert(i, value);
        self
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    /// Times of nodes carrying a distinct left limit.
    pub fn jump_times(&self) -> Vec<f64> {
        self.left_limits.keys().map(|&i| self.grid.node(i)).collect()
    }

    pub fn node_value(&self, i: usize) -> DVector<f64> {
        self.values.column(i).into_owned()
    }

    pub fn node_left_value(&self, i: usize) -> DVector<f64> {
        self.left_limits
            .get(&i)
            .cloned()
            .unwrap_or_else(|| self.node_value(i))
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.eval_side(t, Side::Right)
    }

    pub fn eval_side(&self, t: f64, side: Side) -> Result<DVector<f64>> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("grid function evaluated at {t}")));
        }
        let g = &self.grid;
        if !g.contains(t) {
            return match self.extension {
                Extension::None => Err(Error::Domain(format!(
                    "t = {t} outside grid [{}, {}]",
                    g.t_min,
                    g.t_max()
                ))),
                Extension::Zero => Ok(DVector::zeros(self.dim())),
                Extension::ConstantTail => Ok(if t < g.t_min {
                    self.node_value(0)
                } else {
                    self.node_value(g.len - 1)
                }),
            };
        }
        if let Some(i) = g.node_index(t) {
            return Ok(match side {
                Side::Right => self.node_value(i),
                Side::Left => self.node_left_value(i),
            });
        }
        let x = ((t - g.t_min) / g.step).clamp(0.0, (g.len - 1) as f64);
        let i = (x.floor() as usize).min(g.len.saturating_sub(2));
        let f = x - i as f64;
        let a = self.values.column(i);
        let b = self.node_left_value(i + 1);
        Ok(a * (1.0 - f) + b * f)
    }

    /// Sup over nodes of the max-norm of the samples.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn map_values(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            grid: self.grid,
            values: f(&self.values),
            extension: self.extension,
            left_limits: self.left_limits.clone(),
        }
    }
}

fn node_abs(v: nalgebra::DVectorView<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `(∫|f|^p ω dt)^{1/p}` by the trapezoid rule, or `sup |f| ω` for `Norm::Sup`.
pub fn weighted_norm(f: &GridFunction, p: Norm) -> Result<f64> {
    let g = f.grid();
    if g.len == 0 {
        return Err(Error::Domain("empty grid".into()));
    }
    match p {
        Norm::Sup => Ok((0..g.len)
            .map(|i| node_abs(f.values.column(i)) * omega(g.node(i)))
            .fold(0.0, f64::max)),
        Norm::Lp(p) => {
            if p == 0 {
                return Err(Error::Domain("p must be at least 1".into()));
            }
            if g.len == 1 {
                return Ok(0.0);
            }
            let mut sum = 0.0;
            for i in 0..g.len {
                let w = if i == 0 || i + 1 == g.len { 0.5 } else { 1.0 };
                sum += w * node_abs(f.values.column(i)).powi(p as i32) * omega(g.node(i));
            }
            Ok((sum * g.step).powf(1.0 / p as f64))
        }
    }
}

impl GridFunction {
    pub fn weighted_norm(&self, p: Norm) -> Result<f64> {
        weighted_norm(self, p)
    }
}
