use nalgebra::DVector;
use serde::Serialize;

use super::whole_line::{RowKind, WholeLineProblem, WholeLineSolver};
use crate::error::Result;
use crate::linalg::norm_inf_estimate;
use crate::spectrum::is_asymptotically_hyperbolic;
use crate::system::DelaySystem;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub gamma0: f64,
    pub beta: f64,
    /// Estimated `‖Λ⁻¹‖` of the discretised operator, nodal sup-norm induced.
    pub inv_norm: f64,
    /// Step count `l`, the smallest integer above `2γ₀‖Λ⁻¹‖(βr + 1) + r`.
    pub l: u64,
    pub lambda_theory: f64,
    /// The norm estimator did not settle within its iteration budget.
    pub low_confidence: bool,
}

impl GammaEstimate {
    pub fn from_parts(beta: f64, inv_norm: f64, r: f64, low_confidence: bool) -> Self {
        let gamma0 = inv_norm * beta + 1.0;
        let bound = 2.0 * gamma0 * inv_norm * (beta * r + 1.0) + r;
        let l = bound.floor() as u64 + 1;
        Self {
            gamma0,
            beta,
            inv_norm,
            l,
            lambda_theory: std::f64::consts::LN_2 / l as f64,
            low_confidence,
        }
    }
}

impl WholeLineSolver {
    /// Row right-hand side `B g` for a nodal forcing without jumps.
    fn forcing_rows(&self, g: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let h = self.grid().step;
        DVector::from_iterator(
            self.nrows(),
            self.rows().rows.iter().map(|row| match row.kind {
                RowKind::Cell { cell, comp } => 0.5 * h * (g[cell * n + comp] + g[(cell + 1) * n + comp]),
                RowKind::SteadyLeft { .. } | RowKind::SteadyRight { .. } => 0.0,
            }),
        )
    }

    /// `Bᵀ y` for a row-indexed vector.
    fn forcing_rows_t(&self, y: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let h = self.grid().step;
        let mut out = DVector::zeros(self.grid().len * n);
        for (row, &yr) in self.rows().rows.iter().zip(y) {
            match row.kind {
                RowKind::Cell { cell, comp } => {
                    out[cell * n + comp] += 0.5 * h * yr;
                    out[(cell + 1) * n + comp] += 0.5 * h * yr;
                }
                RowKind::SteadyLeft { .. } | RowKind::SteadyRight { .. } => {}
            }
        }
        out
    }

    /// `‖S‖_∞` for the discrete solution map `S: g ↦ v`, with a flag set when
    /// the estimator did not converge.
    pub fn inverse_norm(&self, max_iter: usize) -> (f64, bool) {
        let len = self.grid().len * self.dim();
        let apply = |g: &DVector<f64>| {
            let b = self.forcing_rows(g.as_slice());
            let mut y = self.rows().apply_t(b.as_slice());
            self.normal_solve(y.as_mut_slice());
            y
        };
        let apply_t = |v: &DVector<f64>| {
            let mut z = v.clone();
            self.normal_solve(z.as_mut_slice());
            let az = self.rows().apply(z.as_slice());
            self.forcing_rows_t(az.as_slice())
        };
        norm_inf_estimate(len, max_iter, apply, apply_t)
    }

    pub fn gamma0(&self) -> GammaEstimate {
        let beta = self.sys.beta(self.problem.half_width, self.problem.step);
        let (inv_norm, converged) = self.inverse_norm(50);
        GammaEstimate::from_parts(beta, inv_norm, self.sys.max_delay(), !converged)
    }
}

/// `γ₀ = ‖Λ⁻¹‖ β + 1` with `β = Σ_j sup |A_j|`, and the derived `l`, `λ`.
pub fn gamma0_estimate(sys: &DelaySystem, problem: &WholeLineProblem) -> Result<GammaEstimate> {
    is_asymptotically_hyperbolic(sys)?;
    Ok(WholeLineSolver::new(sys, problem)?.gamma0())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{AutonomousSystem, Mat, PerturbationProfile};

    #[test]
    fn unit_ode() {
        let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap());
        let est = gamma0_estimate(&sys, &WholeLineProblem::new(25.0, 1.0 / 32.0).unwrap()).unwrap();
        assert_eq!(est.beta, 1.0);
        assert!((est.inv_norm - 1.0).abs() < 1e-2, "{}", est.inv_norm);
        assert!(est.gamma0 >= 1.0);
        assert!((4..=5).contains(&est.l), "{}", est.l);
    }

    #[test]
    fn perturbed_delay_beta() {
        let base = AutonomousSystem::scalar(&[0.0, 1.0], &[0.0, -1.0]).unwrap();
        let sys = DelaySystem::autonomous(&base)
            .with_perturbations(vec![
                PerturbationProfile::rational(Mat::from_element(1, 1, -0.1)),
                PerturbationProfile::zero(1),
            ])
            .unwrap();
        let beta = sys.beta(30.0, 1.0 / 64.0);
        assert!((beta - 1.1).abs() < 1e-12, "{beta}");
    }
}
