use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cubic Hermite value on a unit cell from end values and end slopes
/// (slopes already scaled by the cell width).
#[inline]
pub(crate) fn hermite(u: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    (2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * d0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * d1
}

/// Derivative in `u` of [`hermite`].
#[inline]
pub(crate) fn hermite_du(u: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let u2 = u * u;
    (6.0 * u2 - 6.0 * u) * y0
        + (3.0 * u2 - 4.0 * u + 1.0) * d0
        + (-6.0 * u2 + 6.0 * u) * y1
        + (3.0 * u2 - 2.0 * u) * d1
}

/// A history `φ ∈ C([-r, 0], ℝⁿ)` sampled at `m + 1` uniform nodes.
///
/// Between nodes the segment is piecewise linear unless per-cell end slopes
/// are attached, in which case it is the cubic Hermite interpolant the
/// integrator produced.
#[derive(Clone, Debug, PartialEq)]
pub struct HistorySegment {
    pub base_time: f64,
    span: f64,
    values: DMatrix<f64>,
    slopes: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl HistorySegment {
    /// `values` is `n × (m + 1)`, column `i` at `θ = -r + i·r/m`.
    pub fn new(base_time: f64, span: f64, values: DMatrix<f64>) -> Result<Self> {
        if !(span >= 0.0 && span.is_finite()) {
            return Err(Error::Domain(format!("history span {span} must be >= 0")));
        }
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::Domain("history needs at least one node".into()));
        }
        if span == 0.0 && values.ncols() != 1 {
            return Err(Error::Domain("zero-span history has exactly one node".into()));
        }
        if span > 0.0 && values.ncols() < 2 {
            return Err(Error::Domain("history needs at least two nodes".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("history has non-finite samples".into()));
        }
        Ok(Self {
            base_time,
            span,
            values,
            slopes: None,
        })
    }

    pub(crate) fn with_slopes(mut self, left: DMatrix<f64>, right: DMatrix<f64>) -> Self {
        debug_assert_eq!(left.ncols(), self.m());
        self.slopes = Some((left, right));
        self
    }

    pub fn from_fn(
        base_time: f64,
        span: f64,
        m: usize,
        n: usize,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self> {
        let m = if span == 0.0 { 0 } else { m };
        let cols = m + 1;
        let mut values = DMatrix::zeros(n, cols);
        for i in 0..cols {
            let theta = if m == 0 { 0.0 } else { -span + span * i as f64 / m as f64 };
            values.set_column(i, &f(theta));
        }
        Self::new(base_time, span, values)
    }

    pub fn constant(base_time: f64, span: f64, m: usize, c: &DVector<f64>) -> Result<Self> {
        Self::from_fn(base_time, span, m, c.len(), |_| c.clone())
    }

    /// History from a stacked nodal vector (node-major, component-minor).
    pub fn from_vector(base_time: f64, span: f64, n: usize, v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(n) {
            return Err(Error::Domain("nodal vector length is not a multiple of n".into()));
        }
        let values = DMatrix::from_column_slice(n, v.len() / n, v.as_slice());
        Self::new(base_time, span, values)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.values.as_slice())
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of cells.
    pub fn m(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn spacing(&self) -> f64 {
        if self.m() == 0 {
            0.0
        } else {
            self.span / self.m() as f64
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node(&self, i: usize) -> DVector<f64> {
        self.values.column(i).into_owned()
    }

    pub fn has_slopes(&self) -> bool {
        self.slopes.is_some()
    }

    /// Max over nodes and components.
    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    /// Cell `i` end slopes `(left, right)` in time units, component `c`.
    pub(crate) fn cell_slopes(&self, i: usize, c: usize) -> (f64, f64) {
        match &self.slopes {
            Some((l, r)) => (l[(c, i)], r[(c, i)]),
            None => {
                let s = (self.values[(c, i + 1)] - self.values[(c, i)]) / self.spacing();
                (s, s)
            }
        }
    }

    /// `φ(θ)` for `θ ∈ [-r, 0]`.
    pub fn eval(&self, theta: f64) -> Result<DVector<f64>> {
        let n = self.dim();
        if self.m() == 0 {
            return Ok(self.node(0));
        }
        let tol = 1e-9 * self.spacing();
        if theta < -self.span - tol || theta > tol {
            return Err(Error::Domain(format!(
                "θ = {theta} outside [-{}, 0]",
                self.span
            )));
        }
        let h = self.spacing();
        let x = ((theta + self.span) / h).clamp(0.0, self.m() as f64);
        let i = (x.floor() as usize).min(self.m() - 1);
        let u = x - i as f64;
        Ok(DVector::from_fn(n, |c, _| {
            let (d0, d1) = self.cell_slopes(i, c);
            hermite(
                u,
                self.values[(c, i)],
                self.values[(c, i + 1)],
                d0 * h,
                d1 * h,
            )
        }))
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values *= a;
        if let Some((l, r)) = &mut out.slopes {
            *l *= a;
            *r *= a;
        }
        out
    }

    /// Pointwise sum of nodal data; slopes are kept only when both carry them.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.values.shape() != other.values.shape() {
            return Err(Error::Domain("history shapes differ".into()));
        }
        let mut out = self.clone();
        out.values += &other.values;
        out.slopes = match (&self.slopes, &other.slopes) {
            (Some((a, b)), Some((c, d))) => Some((a + c, b + d)),
            _ => None,
        };
        Ok(out)
    }

    /// Drop attached slopes, leaving the piecewise-linear interpolant.
    pub fn linear(&self) -> Self {
        let mut out = self.clone();
        out.slopes = None;
        out
    }
}
