use nalgebra::DMatrix;
use serde::Serialize;

use super::convolve::derivative;
use crate::error::{Error, Result};
use crate::system::{k_rate, omega, shift_factor, DelaySystem, Extension, GridFunction, Mat, ShiftSign};

/// `B_0(t) = k(t) I + A_0(t)`, `B_j(t) = M_j^+(t) A_j(t + r_j)`.
pub fn adjoint_matrices(sys: &DelaySystem, t: f64) -> Vec<Mat> {
    let n = sys.dim();
    sys.delays()
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let a = &sys.coefficients(t + r)[j];
            if j == 0 {
                a + Mat::identity(n, n) * k_rate(t)
            } else {
                a * shift_factor(t, r, ShiftSign::Plus)
            }
        })
        .collect()
}

/// `(Λ x)(t) = x'(t) - Σ_j A_j(t) x(t - r_j)` on the grid of `x`, with `x`
/// extended by zero.
pub fn apply_operator(sys: &DelaySystem, x: &GridFunction) -> Result<GridFunction> {
    let g = *x.grid();
    let d = derivative(x);
    let xe = x.clone().with_extension(Extension::Zero);
    let mut out = DMatrix::zeros(x.dim(), g.len);
    for i in 0..g.len {
        let t = g.node(i);
        let mut v = d.column(i).into_owned();
        for (a, &r) in sys.coefficients(t).iter().zip(sys.delays()) {
            v -= a * xe.eval(t - r)?;
        }
        out.set_column(i, &v);
    }
    GridFunction::new(g, out)
}

/// `(Λ* y)(t) = -y'(t) - Σ_j B_j(t)ᵀ y(t + r_j)` on the grid of `y`, with `y`
/// extended by zero.
pub fn apply_adjoint(sys: &DelaySystem, y: &GridFunction) -> Result<GridFunction> {
    let g = *y.grid();
    let d = derivative(y);
    let ye = y.clone().with_extension(Extension::Zero);
    let mut out = DMatrix::zeros(y.dim(), g.len);
    for i in 0..g.len {
        let t = g.node(i);
        let mut v = -d.column(i).into_owned();
        for (b, &r) in adjoint_matrices(sys, t).iter().zip(sys.delays()) {
            v -= b.transpose() * ye.eval(t + r)?;
        }
        out.set_column(i, &v);
    }
    GridFunction::new(g, out)
}

/// `∫ u(t)ᵀ v(t) dμ` by the trapezoid rule.
pub fn weighted_pairing(u: &GridFunction, v: &GridFunction) -> f64 {
    let g = u.grid();
    let (a, b) = (u.values(), v.values());
    (0..g.len)
        .map(|i| {
            let w = if i == 0 || i + 1 == g.len { 0.5 } else { 1.0 };
            w * a.column(i).dot(&b.column(i)) * omega(g.node(i))
        })
        .sum::<f64>()
        * g.step
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairingResult {
    /// `⟨y, Λ x⟩_μ`.
    pub lhs: f64,
    /// `⟨Λ* y, x⟩_μ`.
    pub rhs: f64,
    /// `|lhs - rhs| / (|x|_sup |y|_sup)`.
    pub residual: f64,
}

pub fn adjoint_pairing_residual(sys: &DelaySystem, x: &GridFunction, y: &GridFunction) -> Result<PairingResult> {
    if x.grid() != y.grid() || x.dim() != y.dim() {
        return Err(Error::Precondition("x and y must share grid and dimension".into()));
    }
    let len = x.grid().len;
    for (name, f) in [("x", x), ("y", y)] {
        let ends = f.node_value(0).amax().max(f.node_value(len - 1).amax());
        if ends >= 1e-10 {
            return Err(Error::Precondition(format!(
                "{name} is not compactly supported inside its grid (end value {ends:.3e})"
            )));
        }
    }
    let (nx, ny) = (x.sup_norm(), y.sup_norm());
    if nx == 0.0 || ny == 0.0 {
        return Ok(PairingResult {
            lhs: 0.0,
            rhs: 0.0,
            residual: 0.0,
        });
    }
    let lhs = weighted_pairing(y, &apply_operator(sys, x)?);
    let rhs = weighted_pairing(&apply_adjoint(sys, y)?, x);
    Ok(PairingResult {
        lhs,
        rhs,
        residual: (lhs - rhs).abs() / (nx * ny),
    })
}
