use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::autonomous::GreenKernel;
use super::fit::fit_exponential_bound;
use crate::error::{Error, Result};
use crate::system::{mat_norm, DelaySystem, GridFunction, Mat, Side, UniformGrid};

/// `Γ(t, z) = Σ_j C_j(t) G₀(t - r_j - z)`, with `C_j(t) = A_j(t) - A_{+,j}`.
pub fn perturbed_kernel_gamma(sys: &DelaySystem, g0: &GreenKernel, t: f64, z: f64) -> Mat {
    let n = sys.dim();
    let mut out = Mat::zeros(n, n);
    for (c, &r) in sys.deviation_side(t, Side::Right).iter().zip(sys.delays()) {
        if c.iter().any(|x| *x != 0.0) {
            out += c * g0.eval_mean(t - r - z);
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct NeumannOptions {
    /// Number of iterated kernels `J`.
    pub order: usize,
    /// Extra support of the shared integration grid on each side; `None`
    /// picks `10/a₀`.
    pub margin: Option<f64>,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            order: 6,
            margin: None,
        }
    }
}

/// Predicted constants of the perturbed kernel.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NeumannConstants {
    pub k0: f64,
    pub a0: f64,
    pub eps: f64,
    pub threshold: f64,
    pub k1: f64,
    pub a1: f64,
    pub k2: f64,
}

/// Small-gain data for `sys` given the envelope `(K₀, a₀)` of `G₀`.
pub fn small_gain(sys: &DelaySystem, k0: f64, a0: f64, horizon: f64) -> NeumannConstants {
    let r = sys.max_delay();
    let eps = sys.deviation_sup(horizon, 1.0 / 64.0);
    let threshold = a0 * (-a0 * r).exp() / (2.0 * k0);
    let k1 = k0 * eps * (a0 * r).exp();
    let a1 = (a0 * a0 - 2.0 * a0 * k1).max(0.0).sqrt();
    NeumannConstants {
        k0,
        a0,
        eps,
        threshold,
        k1,
        a1,
        k2: k1 / a1,
    }
}

/// `G(t, z)` sampled on `t_grid × z_grid`, with the iterated kernels.
#[derive(Clone, Debug, Serialize)]
pub struct PerturbedKernel {
    #[serde(skip)]
    pub t_grid: UniformGrid,
    #[serde(skip)]
    pub z_grid: UniformGrid,
    /// `Γ_j` restricted to `t_grid × z_grid`; block `(i, k)` is `n×n`.
    #[serde(skip)]
    pub terms: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub total: DMatrix<f64>,
    /// `sup |Γ_j|` over the whole integration grid.
    pub term_norms: Vec<f64>,
    pub ratio: f64,
    pub constants: NeumannConstants,
    pub fit_k: f64,
    pub fit_a: f64,
    pub truncation_bound: f64,
    pub warnings: Vec<String>,
}

impl PerturbedKernel {
    pub fn dim(&self) -> usize {
        self.total.nrows() / self.t_grid.len
    }

    pub fn block(&self, i: usize, k: usize) -> Mat {
        let n = self.dim();
        self.total.view((i * n, k * n), (n, n)).into_owned()
    }

    pub fn term_block(&self, j: usize, i: usize, k: usize) -> Mat {
        let n = self.dim();
        self.terms[j].view((i * n, k * n), (n, n)).into_owned()
    }

    /// `(|t - z|, |G(t, z)|)` over all sampled pairs.
    pub fn norm_samples(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.t_grid.len * self.z_grid.len);
        for i in 0..self.t_grid.len {
            for k in 0..self.z_grid.len {
                let d = (self.t_grid.node(i) - self.z_grid.node(k)).abs();
                out.push((d, mat_norm(&self.block(i, k))));
            }
        }
        out
    }

    /// `x(t) = ∫ G(t, z) h(z) dz` by the trapezoid rule on `z_grid`.
    pub fn apply(&self, h: &GridFunction) -> Result<GridFunction> {
        let n = self.dim();
        let zg = &self.z_grid;
        let mut hz = DVector::zeros(n * zg.len);
        for k in 0..zg.len {
            let w = if k == 0 || k + 1 == zg.len { 0.5 } else { 1.0 } * zg.step;
            let v = h.eval(zg.node(k))?;
            hz.rows_mut(k * n, n).copy_from(&(v * w));
        }
        let x = &self.total * hz;
        let values = DMatrix::from_column_slice(n, self.t_grid.len, x.as_slice());
        GridFunction::new(self.t_grid, values)
    }
}

fn aligned(a: f64, b: f64, step: f64) -> bool {
    let q = (a - b) / step;
    (q - q.round()).abs() < 1e-9
}

/// Neumann series `G = G₀ + G₀ Σ_j Γ_j`, `Γ_{j+1} = Γ Γ_j`, on a shared
/// integration grid extending `t_grid ∪ z_grid` by a margin on each side.
///
/// Both grids must have the same step and be aligned. `g0` must carry its
/// fitted envelope; outside its grid it is taken as zero.
pub fn neumann_green(
    sys: &DelaySystem,
    g0: &GreenKernel,
    opts: NeumannOptions,
    t_grid: &UniformGrid,
    z_grid: &UniformGrid,
) -> Result<PerturbedKernel> {
    let n = sys.dim();
    let h = t_grid.step;
    if (z_grid.step - h).abs() > 1e-12 * h || !aligned(t_grid.t_min, z_grid.t_min, h) {
        return Err(Error::Precondition(
            "t and z grids must share the step and be aligned".into(),
        ));
    }
    if opts.order == 0 {
        return Err(Error::Precondition("Neumann order must be at least 1".into()));
    }
    let (k0, a0) = (g0.fit_k, g0.fit_a);
    if !(k0.is_finite() && a0.is_finite() && a0 > 0.0) {
        return Err(Error::Precondition(
            "Green kernel has no decaying exponential fit".into(),
        ));
    }
    let margin = opts.margin.unwrap_or(10.0 / a0);
    let lo = t_grid.t_min.min(z_grid.t_min);
    let hi = t_grid.t_max().max(z_grid.t_max());
    let pad = (margin / h).ceil();
    let s_min = lo - pad * h;
    let s_len = ((hi - lo) / h).round() as usize + 1 + 2 * pad as usize;
    let s_grid = UniformGrid::with_len(s_min, h, s_len);

    let horizon = s_min.abs().max(s_grid.t_max().abs());
    let constants = small_gain(sys, k0, a0, horizon);
    if constants.eps >= constants.threshold {
        return Err(Error::SmallGain {
            eps: constants.eps,
            threshold: constants.threshold,
        });
    }

    let ns = s_grid.len * n;
    let weights: Vec<f64> = (0..s_grid.len)
        .map(|i| if i == 0 || i + 1 == s_grid.len { 0.5 * h } else { h })
        .collect();

    let deviations: Vec<Vec<Mat>> = s_grid
        .nodes()
        .map(|t| sys.deviation_side(t, Side::Right))
        .collect();
    let mut gamma = DMatrix::zeros(ns, ns);
    let mut g0mat = DMatrix::zeros(ns, ns);
    for i in 0..s_grid.len {
        let t = s_grid.node(i);
        for k in 0..s_grid.len {
            let z = s_grid.node(k);
            let mut block = Mat::zeros(n, n);
            for (c, &r) in deviations[i].iter().zip(sys.delays()) {
                if c.iter().any(|x| *x != 0.0) {
                    block += c * g0.eval_mean(t - r - z);
                }
            }
            gamma.view_mut((i * n, k * n), (n, n)).copy_from(&block);
            g0mat
                .view_mut((i * n, k * n), (n, n))
                .copy_from(&g0.eval_mean(t - z));
        }
    }

    let block_sup = |m: &DMatrix<f64>| -> f64 {
        let mut best = 0.0f64;
        for i in 0..s_grid.len {
            for k in 0..s_grid.len {
                best = best.max(mat_norm(&m.view((i * n, k * n), (n, n)).into_owned()));
            }
        }
        best
    };
    let scale_cols = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = m.clone();
        for k in 0..s_grid.len {
            for c in 0..n {
                out.column_mut(k * n + c).scale_mut(weights[k]);
            }
        }
        out
    };

    let gamma_w = scale_cols(&gamma);
    let mut terms_full = vec![gamma.clone()];
    let mut term_norms = vec![block_sup(&gamma)];
    for _ in 1..opts.order {
        let next = &gamma_w * terms_full.last().unwrap();
        term_norms.push(block_sup(&next));
        terms_full.push(next);
    }
    let ratio = term_norms
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    if ratio >= 1.0 {
        return Err(Error::Divergence { ratio });
    }

    let mut sum = DMatrix::zeros(ns, ns);
    for t in &terms_full {
        sum += t;
    }
    let total_full = &g0mat + scale_cols(&g0mat) * &sum;

    let t_off = ((t_grid.t_min - s_min) / h).round() as usize;
    let z_off = ((z_grid.t_min - s_min) / h).round() as usize;
    let restrict = |m: &DMatrix<f64>| -> DMatrix<f64> {
        m.view((t_off * n, z_off * n), (t_grid.len * n, z_grid.len * n))
            .into_owned()
    };
    let terms: Vec<DMatrix<f64>> = terms_full.iter().map(restrict).collect();
    let total = restrict(&total_full);

    // Mass of G(t, ·) dropped beyond the margin, from the envelopes.
    let truncation_bound = constants.k2.max(k0) * (-constants.a1.max(1e-12) * margin).exp();
    let mut warnings = Vec::new();
    if truncation_bound > 1e-6 {
        warnings.push(format!(
            "neumann: truncation bound {truncation_bound:.3e} beyond margin {margin:.2}"
        ));
    }
    let mut kernel = PerturbedKernel {
        t_grid: *t_grid,
        z_grid: *z_grid,
        terms,
        total,
        term_norms,
        ratio,
        constants,
        fit_k: f64::NAN,
        fit_a: f64::NAN,
        truncation_bound,
        warnings,
    };
    match fit_exponential_bound(&kernel.norm_samples()) {
        Ok((k, a)) => {
            kernel.fit_k = k;
            kernel.fit_a = a;
        }
        Err(e) => kernel.warnings.push(format!("neumann: {e}")),
    }
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{green_autonomous, GreenOptions};
    use crate::system::{AutonomousSystem, PerturbationProfile};

    fn unit_kernel(half: f64) -> GreenKernel {
        let grid = UniformGrid::new(-half, half, 1.0 / 16.0).unwrap();
        let lim = AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap();
        green_autonomous(&lim, 0.9, &grid, GreenOptions::default()).unwrap()
    }

    #[test]
    fn zero_perturbation_reproduces_g0() {
        let g0 = unit_kernel(30.0);
        let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap());
        let grid = UniformGrid::new(-3.0, 3.0, 1.0 / 16.0).unwrap();
        let k = neumann_green(&sys, &g0, NeumannOptions::default(), &grid, &grid).unwrap();
        assert!(k.term_norms.iter().all(|&x| x == 0.0));
        for i in 0..grid.len {
            for j in 0..grid.len {
                let want = g0.eval_mean(grid.node(i) - grid.node(j))[(0, 0)];
                assert!((k.block(i, j)[(0, 0)] - want).abs() < 1e-14);
            }
        }
        assert_eq!(
            perturbed_kernel_gamma(&sys, &g0, 0.3, -1.0),
            Mat::zeros(1, 1)
        );
    }

    #[test]
    fn small_gain_violation_is_reported() {
        let g0 = unit_kernel(30.0);
        let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap())
            .with_perturbations(vec![PerturbationProfile::rational(Mat::from_element(1, 1, 0.9))])
            .unwrap();
        let grid = UniformGrid::new(-2.0, 2.0, 1.0 / 16.0).unwrap();
        let err = neumann_green(&sys, &g0, NeumannOptions::default(), &grid, &grid).unwrap_err();
        assert!(matches!(err, Error::SmallGain { .. }));
    }

    #[test]
    fn gamma_formula_at_origin() {
        let g0 = unit_kernel(10.0);
        let c = 0.2;
        let sys = DelaySystem::autonomous(&AutonomousSystem::scalar(&[0.0], &[-1.0]).unwrap())
            .with_perturbations(vec![PerturbationProfile::rational(Mat::from_element(1, 1, c))])
            .unwrap();
        for z in [-2.0, -0.5, 1.0] {
            let g = perturbed_kernel_gamma(&sys, &g0, 0.0, z)[(0, 0)];
            assert!((g - c * g0.eval_mean(-z)[(0, 0)]).abs() < 1e-15);
        }
    }
}
