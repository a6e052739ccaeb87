use nalgebra::{DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::whole_line::{assemble, RowKind, WholeLineProblem};
use crate::error::{Error, Result};
use crate::system::{omega, DelaySystem};

/// Relative singular-value cutoff below which a direction counts as kernel.
pub const KERNEL_CUTOFF: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FredholmReport {
    pub dim_ker: usize,
    pub dim_ker_adjoint: usize,
    pub index: i64,
    pub range_orth_residual: f64,
    /// Smallest singular value over the largest, for `Λ` and its adjoint.
    pub sigma_min_rel: f64,
    pub sigma_min_adjoint_rel: f64,
    /// The same ratio for `Λ` on half the domain.
    pub sigma_min_half_domain_rel: f64,
    /// The smallest singular value drops markedly when the domain doubles.
    pub shrinks_with_domain: bool,
    /// Trivial kernel, index zero and a domain-stable smallest singular value.
    pub hypotheses_met: bool,
    pub half_width: f64,
    pub step: f64,
}

fn sigma_rel(s: &DVector<f64>) -> f64 {
    let max = s.max();
    if max > 0.0 {
        s.min() / max
    } else {
        0.0
    }
}

fn kernel_count(s: &DVector<f64>) -> usize {
    let max = s.max();
    s.iter().filter(|&&v| v < KERNEL_CUTOFF * max).count()
}

/// Smooth random test function: a few Gaussian bumps per component.
fn smooth_random(rng: &mut ChaCha8Rng, n: usize, nodes: &[f64], half_width: f64) -> DVector<f64> {
    let mut x = DVector::zeros(nodes.len() * n);
    for c in 0..n {
        for _ in 0..4 {
            let amp: f64 = rng.gen_range(-1.0..1.0);
            let center: f64 = rng.gen_range(-0.5..0.5) * half_width;
            let width: f64 = rng.gen_range(0.5..2.0);
            for (i, &t) in nodes.iter().enumerate() {
                let u = (t - center) / width;
                x[i * n + c] += amp * (-u * u).exp();
            }
        }
    }
    x
}

/// Kernel dimensions of the discretised `Λ` and of its adjoint, the index,
/// and the weighted orthogonality of the range of `Λ` to the adjoint kernel.
pub fn fredholm_diagnostics(sys: &DelaySystem, problem: &WholeLineProblem, seed: u64) -> Result<FredholmReport> {
    let grid = problem.grid();
    let n = sys.dim();
    let (primal, _) = assemble(sys, &grid, false);
    let (adjoint, _) = assemble(sys, &grid, true);
    let a = primal.dense();
    let sv = a.clone().singular_values();
    let svd_adj = SVD::new(adjoint.dense(), false, true);
    let v_t = svd_adj
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Domain("adjoint SVD did not return singular vectors".into()))?;
    let sv_adj = &svd_adj.singular_values;
    let dim_ker = kernel_count(&sv);
    let dim_ker_adjoint = kernel_count(sv_adj);

    let adj_max = sv_adj.max();
    let kernel_vectors: Vec<DVector<f64>> = sv_adj
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < KERNEL_CUTOFF * adj_max)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();

    let nodes: Vec<f64> = grid.nodes().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut range_orth_residual = 0.0f64;
    if !kernel_vectors.is_empty() {
        for _ in 0..8 {
            let x = smooth_random(&mut rng, n, &nodes, problem.half_width);
            let ax = &a * &x;
            for y in &kernel_vectors {
                let (mut num, mut den) = (0.0, 0.0);
                for (k, row) in primal.rows.iter().enumerate() {
                    if let RowKind::Cell { cell, comp } = row.kind {
                        let mid = 0.5 * (nodes[cell] + nodes[cell + 1]);
                        let y_mid = 0.5 * (y[cell * n + comp] + y[(cell + 1) * n + comp]);
                        let w = omega(mid);
                        num += w * y_mid * ax[k];
                        den += w * (y_mid * ax[k]).abs();
                    }
                }
                if den > 0.0 {
                    range_orth_residual = range_orth_residual.max(num.abs() / den);
                }
            }
        }
    }

    let half = WholeLineProblem::new(problem.half_width / 2.0, problem.step)?;
    let (half_primal, _) = assemble(sys, &half.grid(), false);
    let sv_half = half_primal.dense().singular_values();
    let sigma_min_rel = sigma_rel(&sv);
    let sigma_min_half_domain_rel = sigma_rel(&sv_half);
    let shrinks_with_domain = sigma_min_rel < 0.7 * sigma_min_half_domain_rel;
    let index = dim_ker as i64 - dim_ker_adjoint as i64;
    Ok(FredholmReport {
        dim_ker,
        dim_ker_adjoint,
        index,
        range_orth_residual,
        sigma_min_rel,
        sigma_min_adjoint_rel: sigma_rel(sv_adj),
        sigma_min_half_domain_rel,
        shrinks_with_domain,
        hypotheses_met: dim_ker == 0 && dim_ker_adjoint == 0 && !shrinks_with_domain,
        half_width: problem.half_width,
        step: problem.step,
    })
}

impl WholeLineProblem {
    /// Coarse domain for dense diagnostics: half-width at most 30, step at least 1/8.
    pub fn coarse(&self) -> Self {
        Self::new(self.half_width.min(30.0), self.step.max(0.125)).expect("positive inputs")
    }
}
