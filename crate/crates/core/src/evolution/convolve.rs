use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::green::{GreenKernel, PerturbedKernel};
use crate::system::{omega, DelaySystem, Extension, GridFunction, Mat};

/// Kernel used by [`convolve_solve`].
#[derive(Clone, Copy, Debug)]
pub enum Kernel<'a> {
    Autonomous(&'a GreenKernel),
    Perturbed(&'a PerturbedKernel),
}

#[derive(Clone, Debug)]
pub struct ConvolveReport {
    pub x: GridFunction,
    /// `max |x' - Σ A_j x(· - r_j) - h|` over interior nodes.
    pub residual: f64,
    /// `residual / sup |h|`.
    pub relative_residual: f64,
    pub warnings: Vec<String>,
}

/// `x(t) = ∫ G(t - z) h(z) dz` (or `∫ G(t, z) h(z) dz`) on the grid of `h`, by
/// the trapezoid rule, with the finite-difference residual of the equation.
pub fn convolve_solve(sys: &DelaySystem, kernel: Kernel<'_>, h: &GridFunction) -> Result<ConvolveReport> {
    let mut warnings = Vec::new();
    let hmax = h.sup_norm();
    let g = h.grid();
    if g.len >= 2 {
        let ends = h.node_value(0).amax().max(h.node_value(g.len - 1).amax());
        if ends >= 1e-8 * hmax && hmax > 0.0 {
            warnings.push(format!(
                "convolve: forcing does not decay at the grid ends (|h| = {ends:.3e}); truncation error up to {:.3e}",
                ends
            ));
        }
    }
    let x = match kernel {
        Kernel::Autonomous(g0) => convolve_autonomous(g0, h)?,
        Kernel::Perturbed(k) => {
            let x = k.apply(h)?;
            if x.grid() != h.grid() {
                return Err(Error::Precondition(
                    "perturbed kernel t-grid must match the forcing grid".into(),
                ));
            }
            x
        }
    };
    let residual = equation_residual(sys, &x, h)?;
    let relative_residual = if hmax > 0.0 { residual / hmax } else { residual };
    Ok(ConvolveReport {
        x,
        residual,
        relative_residual,
        warnings,
    })
}

fn convolve_autonomous(g0: &GreenKernel, h: &GridFunction) -> Result<GridFunction> {
    let grid = *h.grid();
    let n = g0.dim();
    if h.dim() != n {
        return Err(Error::Domain("forcing and kernel dimensions differ".into()));
    }
    let len = grid.len;
    let step = grid.step;
    // Kernel at every node difference (i - k)·step.
    let table: Vec<Mat> = (0..2 * len - 1)
        .map(|d| g0.eval_mean((d as f64 - (len - 1) as f64) * step))
        .collect();
    let hv = h.values();
    let mut out = DMatrix::zeros(n, len);
    for i in 0..len {
        let mut acc = DVector::zeros(n);
        for k in 0..len {
            let w = if k == 0 || k + 1 == len { 0.5 } else { 1.0 };
            let col = hv.column(k);
            if col.iter().all(|v| *v == 0.0) {
                continue;
            }
            acc += &table[i + len - 1 - k] * col * w;
        }
        out.set_column(i, &(acc * step));
    }
    GridFunction::new(grid, out)
}

/// `∫ G₀(t - z) h(z) dμ(z)`: the convolution against the weighted measure,
/// kept as a diagnostic next to the unweighted inverse.
pub fn convolve_weighted(g0: &GreenKernel, h: &GridFunction) -> Result<GridFunction> {
    let g = *h.grid();
    let mut values = h.values().clone();
    for i in 0..g.len {
        values.column_mut(i).scale_mut(omega(g.node(i)));
    }
    convolve_autonomous(g0, &GridFunction::new(g, values)?)
}

/// Centered-difference derivative, one-sided at the ends.
pub(crate) fn derivative(x: &GridFunction) -> DMatrix<f64> {
    let g = x.grid();
    let v = x.values();
    let len = g.len;
    let h = g.step;
    let mut d = DMatrix::zeros(v.nrows(), len);
    if len < 2 {
        return d;
    }
    for i in 0..len {
        let col = if i == 0 {
            (v.column(1) - v.column(0)) / h
        } else if i + 1 == len {
            (v.column(len - 1) - v.column(len - 2)) / h
        } else {
            (v.column(i + 1) - v.column(i - 1)) / (2.0 * h)
        };
        d.set_column(i, &col);
    }
    d
}

/// `max |x' - Σ A_j(t) x(t - r_j) - h|` over nodes whose stencil and delayed
/// arguments stay inside the grid.
pub fn equation_residual(sys: &DelaySystem, x: &GridFunction, h: &GridFunction) -> Result<f64> {
    let g = *x.grid();
    let d = derivative(x);
    let r = sys.max_delay();
    let xe = x.clone().with_extension(Extension::ConstantTail);
    let mut worst = 0.0f64;
    for i in 1..g.len.saturating_sub(1) {
        let t = g.node(i);
        if t - r < g.t_min {
            continue;
        }
        let mut res = d.column(i).into_owned() - h.eval(t)?;
        for (a, &rj) in sys.coefficients(t).iter().zip(sys.delays()) {
            res -= a * xe.eval(t - rj)?;
        }
        worst = worst.max(res.amax());
    }
    Ok(worst)
}
