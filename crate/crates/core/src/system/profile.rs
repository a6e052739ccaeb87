use serde::{Deserialize, Serialize};

use super::{Mat, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Zero,
    RationalDecay,
    ExponentialDecay,
    CompactBump,
}

/// A decaying coefficient perturbation `C(t) = amplitude · f(t)`.
///
/// `compact_bump` is the box `f = 1` on `[center - width, center + width)`,
/// zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationProfile {
    pub kind: ProfileKind,
    pub amplitude: Mat,
    pub rate: f64,
    pub width: f64,
    pub center: f64,
}

impl PerturbationProfile {
    pub fn zero(n: usize) -> Self {
        Self {
            kind: ProfileKind::Zero,
            amplitude: Mat::zeros(n, n),
            rate: 1.0,
            width: 1.0,
            center: 0.0,
        }
    }

    pub fn rational(amplitude: Mat) -> Self {
        Self {
            kind: ProfileKind::RationalDecay,
            amplitude,
            rate: 1.0,
            width: 1.0,
            center: 0.0,
        }
    }

    pub fn exponential(amplitude: Mat, rate: f64) -> Self {
        Self {
            kind: ProfileKind::ExponentialDecay,
            amplitude,
            rate,
            width: 1.0,
            center: 0.0,
        }
    }

    pub fn bump(amplitude: Mat, center: f64, width: f64) -> Self {
        Self {
            kind: ProfileKind::CompactBump,
            amplitude,
            rate: 1.0,
            width,
            center,
        }
    }

    pub(crate) fn validate(&self, n: usize) -> std::result::Result<(), String> {
        if self.amplitude.nrows() != n || self.amplitude.ncols() != n {
            return Err(format!(
                "amplitude must be {n}x{n}, got {}x{}",
                self.amplitude.nrows(),
                self.amplitude.ncols()
            ));
        }
        if self.amplitude.iter().any(|x| !x.is_finite()) {
            return Err("amplitude has a non-finite entry".into());
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err("rate must be positive".into());
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err("width must be positive".into());
        }
        if !self.center.is_finite() {
            return Err("center must be finite".into());
        }
        let h = self.decay_horizon();
        if self.factor(h + 1.0).abs() > 1e-12 || self.factor(-h - 1.0).abs() > 1e-12 {
            return Err("profile does not decay by its declared horizon".into());
        }
        Ok(())
    }

    /// Scalar profile value; right-continuous at the box edges.
    pub fn factor(&self, t: f64) -> f64 {
        self.factor_side(t, Side::Right)
    }

    pub fn factor_side(&self, t: f64, side: Side) -> f64 {
        match self.kind {
            ProfileKind::Zero => 0.0,
            ProfileKind::RationalDecay => 1.0 / (1.0 + t * t),
            ProfileKind::ExponentialDecay => (-self.rate * t.abs()).exp(),
            ProfileKind::CompactBump => {
                let (lo, hi) = (self.center - self.width, self.center + self.width);
                let inside = match side {
                    Side::Right => t >= lo && t < hi,
                    Side::Left => t > lo && t <= hi,
                };
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, t: f64) -> Mat {
        self.eval_side(t, Side::Right)
    }

    pub fn eval_side(&self, t: f64, side: Side) -> Mat {
        &self.amplitude * self.factor_side(t, side)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            ProfileKind::CompactBump => vec![self.center - self.width, self.center + self.width],
            _ => Vec::new(),
        }
    }

    /// `|t|` beyond which the profile factor is below `1e-12`.
    pub fn decay_horizon(&self) -> f64 {
        match self.kind {
            ProfileKind::Zero => 0.0,
            ProfileKind::RationalDecay => 1e6,
            ProfileKind::ExponentialDecay => 12.0 * std::f64::consts::LN_10 / self.rate,
            ProfileKind::CompactBump => self.center.abs() + self.width,
        }
    }

    /// `sup_t |C(t)|` over a dense sample grid on `[-horizon, horizon]`.
    pub fn sup_norm(&self) -> f64 {
        let h = self.decay_horizon().min(1e3);
        let count = 20_000;
        let mut best = 0.0f64;
        for i in 0..=count {
            let t = -h + 2.0 * h * i as f64 / count as f64;
            best = best.max(self.factor(t).abs());
        }
        best = best.max(self.factor(0.0).abs()).max(self.factor(self.center).abs());
        best * super::mat_norm(&self.amplitude)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> Mat {
        Mat::from_element(1, 1, 1.0)
    }

    #[test]
    fn profile_shapes() {
        let p = PerturbationProfile::rational(one() * 2.0);
        assert_eq!(p.eval(0.0)[(0, 0)], 2.0);
        assert!((p.eval(3.0)[(0, 0)] - 0.2).abs() < 1e-16);
        let p = PerturbationProfile::exponential(one(), 0.5);
        assert!((p.factor(-2.0) - (-1.0f64).exp()).abs() < 1e-16);
        let p = PerturbationProfile::bump(one(), 1.0, 0.5);
        assert_eq!(p.factor(0.4), 0.0);
        assert_eq!(p.factor(0.5), 1.0);
        assert_eq!(p.factor_side(0.5, Side::Left), 0.0);
        assert_eq!(p.factor(1.5), 0.0);
        assert_eq!(p.factor_side(1.5, Side::Left), 1.0);
        assert_eq!(PerturbationProfile::zero(2).eval(0.0), Mat::zeros(2, 2));
    }

    #[test]
    fn sup_norms() {
        assert!((PerturbationProfile::rational(one() * -0.1).sup_norm() - 0.1).abs() < 1e-15);
        assert_eq!(PerturbationProfile::bump(one(), 3.0, 0.25).sup_norm(), 1.0);
        assert_eq!(PerturbationProfile::zero(1).sup_norm(), 0.0);
    }

    #[test]
    fn validation() {
        assert!(PerturbationProfile::exponential(one(), -1.0).validate(1).is_err());
        assert!(PerturbationProfile::bump(one(), 0.0, 0.0).validate(1).is_err());
        assert!(PerturbationProfile::rational(one()).validate(2).is_err());
        assert!(PerturbationProfile::rational(one()).validate(1).is_ok());
    }
}
