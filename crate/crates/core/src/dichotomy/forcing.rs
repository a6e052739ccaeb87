use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::whole_line::forcing_active;
use crate::error::Result;
use crate::evolution::HistorySegment;
use crate::system::{DelaySystem, GridFunction, Side, UniformGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// `φ` placed at `[s - r, s]` and extended by a constant plateau: `φ(0)` to
/// the right (forward) or `φ(-r)` to the left (backward). The other side
/// keeps the opposite end value, so the extension is defined on the whole line.
#[derive(Clone, Debug)]
pub struct ExtendedHistory {
    pub phi: HistorySegment,
    pub s: f64,
    pub direction: Direction,
}

pub fn extend_history(phi: &HistorySegment, s: f64, direction: Direction) -> ExtendedHistory {
    ExtendedHistory {
        phi: phi.clone(),
        s,
        direction,
    }
}

impl ExtendedHistory {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let r = self.phi.span();
        let theta = (t - self.s).clamp(-r, 0.0);
        self.phi
            .eval(theta)
            .expect("θ clamped into the history interval")
    }
}

/// `g(t) = L(t) ψ_t` on the active side of `s` and zero on the other, sampled on
/// `grid`. The jump at `s` and any coefficient jumps on grid nodes are stored
/// as left limits.
pub fn build_forcing(sys: &DelaySystem, psi: &ExtendedHistory, grid: &UniformGrid) -> Result<GridFunction> {
    let n = sys.dim();
    let s = psi.s;
    let active = |t: f64, side: Side| forcing_active(psi.direction, t, s, side);
    let value = |t: f64, side: Side| -> DVector<f64> {
        if !active(t, side) {
            return DVector::zeros(n);
        }
        let mut g = DVector::zeros(n);
        for (a, &r) in sys.coefficients_side(t, side).iter().zip(sys.delays()) {
            g += a * psi.eval(t - r);
        }
        g
    };
    let mut values = DMatrix::zeros(n, grid.len);
    for i in 0..grid.len {
        values.set_column(i, &value(grid.node(i), Side::Right));
    }
    let mut f = GridFunction::new(*grid, values)?;
    let mut jumps = sys.breakpoints();
    jumps.push(s);
    for t in jumps {
        if let Some(i) = grid.node_index(t) {
            let t = grid.node(i);
            let left = value(t, Side::Left);
            if left != f.node_value(i) {
                f = f.with_left_limit(i, left);
            }
        }
    }
    Ok(f)
}
