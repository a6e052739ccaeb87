//! Delay systems `x'(t) = Σ_j A_j(t) x(t - r_j)`, their limiting autonomous
//! systems, the weight of the measure `dμ = dt / (1 + t²)` and grid carriers.

mod config;
mod grid;
mod profile;
mod weight;

pub use config::{PerturbationSpec, SystemSpec};
pub use grid::{weighted_norm, Extension, GridFunction, Norm, UniformGrid};
pub use profile::{PerturbationProfile, ProfileKind};
pub use weight::{k_rate, omega, shift_factor, weight_eval, ShiftSign};

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Which limiting system anchors `L₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Plus => f.write_str("plus"),
            Branch::Minus => f.write_str("minus"),
        }
    }
}

/// One-sided limit selector for piecewise-continuous coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Max-row-sum norm, the operator norm induced by the sup-norm on ℝⁿ.
pub fn mat_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// An autonomous system `x'(t) = Σ_j A_j x(t - r_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AutonomousSystem {
    pub delays: Vec<f64>,
    pub matrices: Vec<Mat>,
}

impl AutonomousSystem {
    pub fn new(delays: Vec<f64>, matrices: Vec<Mat>) -> Result<Self> {
        validate_delays(&delays)?;
        let n = matrices.first().map(|m| m.nrows()).unwrap_or(0);
        validate_matrices("matrices", &matrices, delays.len(), n)?;
        Ok(Self { delays, matrices })
    }

    pub fn scalar(delays: &[f64], coefficients: &[f64]) -> Result<Self> {
        Self::new(
            delays.to_vec(),
            coefficients
                .iter()
                .map(|&c| Mat::from_element(1, 1, c))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn max_delay(&self) -> f64 {
        *self.delays.last().unwrap()
    }
}

/// `x'(t) = Σ_j (A_{±,j} + C_j(t)) x(t - r_j)`.
///
/// On the whole line the plus limit anchors `t >= 0` and the minus limit `t < 0`;
/// with equal limits this is just `L₀ + M(t)`.
#[derive(Clone, Debug)]
pub struct DelaySystem {
    dim: usize,
    delays: Vec<f64>,
    limit_plus: Vec<Mat>,
    limit_minus: Vec<Mat>,
    perturbations: Vec<PerturbationProfile>,
}

fn validate_delays(delays: &[f64]) -> Result<()> {
    if delays.is_empty() {
        return Err(Error::invalid("delays", "at least r_0 = 0 is required"));
    }
    if delays[0] != 0.0 {
        return Err(Error::invalid("delays", "first delay must be exactly 0"));
    }
    if delays.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("delays", "delays must be finite"));
    }
    if delays.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("delays", "delays must be strictly increasing"));
    }
    Ok(())
}

fn validate_matrices(field: &str, mats: &[Mat], count: usize, n: usize) -> Result<()> {
    if mats.len() != count {
        return Err(Error::invalid(
            field,
            format!("expected {count} matrices (one per delay), got {}", mats.len()),
        ));
    }
    for (j, m) in mats.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::invalid(
                format!("{field}[{j}]"),
                format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{field}[{j}]"), "non-finite entry"));
        }
    }
    Ok(())
}

impl DelaySystem {
    pub fn new(
        dim: usize,
        delays: Vec<f64>,
        limit_plus: Vec<Mat>,
        limit_minus: Vec<Mat>,
        perturbations: Vec<PerturbationProfile>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        validate_delays(&delays)?;
        let count = delays.len();
        validate_matrices("limit_plus", &limit_plus, count, dim)?;
        validate_matrices("limit_minus", &limit_minus, count, dim)?;
        if perturbations.len() != count {
            return Err(Error::invalid(
                "perturbations",
                format!("expected {count} profiles, got {}", perturbations.len()),
            ));
        }
        for (j, p) in perturbations.iter().enumerate() {
            p.validate(dim)
                .map_err(|msg| Error::invalid(format!("perturbations[{j}]"), msg))?;
        }
        Ok(Self {
            dim,
            delays,
            limit_plus,
            limit_minus,
            perturbations,
        })
    }

    /// Same limit at both ends and no perturbation.
    pub fn autonomous(limit: &AutonomousSystem) -> Self {
        let n = limit.dim();
        let zero = (0..limit.delays.len())
            .map(|_| PerturbationProfile::zero(n))
            .collect();
        Self::new(
            n,
            limit.delays.clone(),
            limit.matrices.clone(),
            limit.matrices.clone(),
            zero,
        )
        .expect("autonomous system built from a validated limit")
    }

    pub fn with_perturbations(mut self, perturbations: Vec<PerturbationProfile>) -> Result<Self> {
        self.perturbations = perturbations;
        Self::new(
            self.dim,
            self.delays,
            self.limit_plus,
            self.limit_minus,
            self.perturbations,
        )
    }

    pub fn with_minus_limit(self, limit_minus: Vec<Mat>) -> Result<Self> {
        Self::new(
            self.dim,
            self.delays,
            self.limit_plus,
            limit_minus,
            self.perturbations,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn max_delay(&self) -> f64 {
        *self.delays.last().unwrap()
    }

    /// Smallest positive delay, if any.
    pub fn min_positive_delay(&self) -> Option<f64> {
        self.delays.get(1).copied()
    }

    pub fn perturbations(&self) -> &[PerturbationProfile] {
        &self.perturbations
    }

    pub fn limit_matrices(&self, branch: Branch) -> &[Mat] {
        match branch {
            Branch::Plus => &self.limit_plus,
            Branch::Minus => &self.limit_minus,
        }
    }

    pub fn limit(&self, branch: Branch) -> AutonomousSystem {
        AutonomousSystem {
            delays: self.delays.clone(),
            matrices: self.limit_matrices(branch).to_vec(),
        }
    }

    pub fn limits_differ(&self) -> bool {
        self.limit_plus != self.limit_minus
    }

    pub fn is_unperturbed(&self) -> bool {
        self.perturbations.iter().all(|p| p.kind == ProfileKind::Zero)
    }

    /// `A_j(t) = A_{branch,j} + C_j(t)`.
    pub fn coefficients_at(&self, t: f64, branch: Branch) -> Vec<Mat> {
        self.limit_matrices(branch)
            .iter()
            .zip(&self.perturbations)
            .map(|(a, c)| a + c.eval(t))
            .collect()
    }

    /// Whole-line coefficients; right-continuous at every breakpoint.
    pub fn coefficients(&self, t: f64) -> Vec<Mat> {
        self.coefficients_side(t, Side::Right)
    }

    pub fn coefficients_side(&self, t: f64, side: Side) -> Vec<Mat> {
        let plus = match side {
            Side::Right => t >= 0.0,
            Side::Left => t > 0.0,
        };
        let branch = if plus { Branch::Plus } else { Branch::Minus };
        self.limit_matrices(branch)
            .iter()
            .zip(&self.perturbations)
            .map(|(a, c)| a + c.eval_side(t, side))
            .collect()
    }

    /// `M_j(t) = A_j(t) - A_{+,j}`: the part of `L(t)` not in the plus limit.
    pub fn deviation_side(&self, t: f64, side: Side) -> Vec<Mat> {
        self.coefficients_side(t, side)
            .into_iter()
            .zip(&self.limit_plus)
            .map(|(a, a0)| a - a0)
            .collect()
    }

    /// Times where some coefficient may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .perturbations
            .iter()
            .flat_map(|p| p.breakpoints())
            .collect();
        if self.limits_differ() {
            out.push(0.0);
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// Largest horizon beyond which every perturbation is negligible.
    pub fn decay_horizon(&self) -> f64 {
        self.perturbations
            .iter()
            .map(|p| p.decay_horizon())
            .fold(0.0, f64::max)
    }

    /// `β = Σ_j sup_t |A_j(t)|`, sampled on `[-half_width, half_width]` with the
    /// given step, plus both limits.
    pub fn beta(&self, half_width: f64, step: f64) -> f64 {
        let count = (2.0 * half_width / step).round() as i64;
        let mut sups = vec![0.0f64; self.delays.len()];
        for (j, s) in sups.iter_mut().enumerate() {
            *s = mat_norm(&self.limit_plus[j]).max(mat_norm(&self.limit_minus[j]));
        }
        let mut probe = |t: f64, side: Side| {
            for (j, a) in self.coefficients_side(t, side).iter().enumerate() {
                sups[j] = sups[j].max(mat_norm(a));
            }
        };
        for i in 0..=count {
            probe(-half_width + i as f64 * step, Side::Right);
        }
        for b in self.breakpoints() {
            probe(b, Side::Left);
            probe(b, Side::Right);
        }
        for p in &self.perturbations {
            if p.kind == ProfileKind::CompactBump {
                probe(p.center, Side::Right);
            }
        }
        probe(0.0, Side::Right);
        sups.iter().sum()
    }

    /// `sup_t Σ_j |A_j(t) - A_{+,j}|`, sampled like [`DelaySystem::beta`].
    pub fn deviation_sup(&self, half_width: f64, step: f64) -> f64 {
        let count = (2.0 * half_width / step).round() as i64;
        let mut best = 0.0f64;
        let mut probe = |t: f64, side: Side| {
            let total: f64 = self.deviation_side(t, side).iter().map(mat_norm).sum();
            best = best.max(total);
        };
        for i in 0..=count {
            probe(-half_width + i as f64 * step, Side::Right);
        }
        for b in self.breakpoints() {
            probe(b, Side::Left);
            probe(b, Side::Right);
        }
        probe(0.0, Side::Right);
        best
    }

    /// `M_j^±(t)` for delay index `j`.
    pub fn shift_factor(&self, t: f64, j: usize, sign: ShiftSign) -> Result<f64> {
        let r = *self
            .delays
            .get(j)
            .ok_or_else(|| Error::Domain(format!("delay index {j} out of range")))?;
        Ok(shift_factor(t, r, sign))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_sys(delays: &[f64], plus: &[f64]) -> DelaySystem {
        DelaySystem::autonomous(&AutonomousSystem::scalar(delays, plus).unwrap())
    }

    #[test]
    fn rejects_bad_delays() {
        let m = || vec![Mat::identity(1, 1), Mat::identity(1, 1)];
        let z = || vec![PerturbationProfile::zero(1), PerturbationProfile::zero(1)];
        let err = DelaySystem::new(1, vec![0.0, 0.0], m(), m(), z()).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "delays"));
        let err = DelaySystem::new(1, vec![0.5, 1.0], m(), m(), z()).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "delays"));
    }

    #[test]
    fn rejects_bad_shapes() {
        let err = DelaySystem::new(
            2,
            vec![0.0],
            vec![Mat::identity(1, 1)],
            vec![Mat::identity(2, 2)],
            vec![PerturbationProfile::zero(2)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "limit_plus[0]"));
    }

    #[test]
    fn coefficients_examples() {
        let sys = scalar_sys(&[0.0, 1.0], &[-1.0, -0.5]);
        for t in [-3.0, 0.0, 7.5] {
            let a = sys.coefficients_at(t, Branch::Plus);
            assert_eq!(a[0][(0, 0)], -1.0);
            assert_eq!(a[1][(0, 0)], -0.5);
        }
        let c = 0.3;
        let sys = scalar_sys(&[0.0], &[-2.0])
            .with_perturbations(vec![PerturbationProfile::rational(Mat::from_element(1, 1, c))])
            .unwrap();
        assert_eq!(sys.coefficients_at(0.0, Branch::Plus)[0][(0, 0)], -2.0 + c);
        let v = sys.coefficients_at(3.0, Branch::Plus)[0][(0, 0)];
        assert!((v - (-2.0 + c / 10.0)).abs() < 1e-15);
    }

    #[test]
    fn branch_switch_is_right_continuous() {
        let sys = scalar_sys(&[0.0], &[-1.0])
            .with_minus_limit(vec![Mat::from_element(1, 1, 2.0)])
            .unwrap();
        assert_eq!(sys.coefficients(0.0)[0][(0, 0)], -1.0);
        assert_eq!(sys.coefficients_side(0.0, Side::Left)[0][(0, 0)], 2.0);
        assert_eq!(sys.coefficients(-1e-9)[0][(0, 0)], 2.0);
        assert_eq!(sys.breakpoints(), vec![0.0]);
    }

    #[test]
    fn beta_sums_sups() {
        let sys = scalar_sys(&[0.0], &[-1.0]);
        assert!((sys.beta(10.0, 0.1) - 1.0).abs() < 1e-15);
        let sys = scalar_sys(&[0.0, 1.0], &[0.0, -1.0])
            .with_perturbations(vec![
                PerturbationProfile::rational(Mat::from_element(1, 1, -0.1)),
                PerturbationProfile::zero(1),
            ])
            .unwrap();
        assert!((sys.beta(10.0, 0.1) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn shift_factor_index_bounds() {
        let sys = scalar_sys(&[0.0, 1.0], &[0.0, -1.0]);
        assert_eq!(sys.shift_factor(0.0, 1, ShiftSign::Plus).unwrap(), 0.5);
        assert!(sys.shift_factor(0.0, 2, ShiftSign::Plus).is_err());
    }
}
