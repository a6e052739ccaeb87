use serde::{Deserialize, Serialize};

use super::{DelaySystem, Mat, PerturbationProfile, ProfileKind};
use crate::error::{Error, Result};

/// JSON form of a perturbation profile. `amplitude` is a row-major flat array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: ProfileKind,
    #[serde(default)]
    pub amplitude: Option<Vec<f64>>,
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub center: Option<f64>,
}

/// JSON form of a [`DelaySystem`]. Matrices are row-major flat arrays of
/// length `dim²`. `limit_minus` defaults to `limit_plus`; `perturbations`
/// defaults to all zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub dim: usize,
    pub delays: Vec<f64>,
    pub limit_plus: Vec<Vec<f64>>,
    #[serde(default)]
    pub limit_minus: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub perturbations: Option<Vec<PerturbationSpec>>,
}

fn matrix(field: &str, n: usize, data: &[f64]) -> Result<Mat> {
    if data.len() != n * n {
        return Err(Error::invalid(
            field,
            format!("expected {} entries (row-major {n}x{n}), got {}", n * n, data.len()),
        ));
    }
    Ok(Mat::from_row_slice(n, n, data))
}

fn matrices(field: &str, n: usize, list: &[Vec<f64>]) -> Result<Vec<Mat>> {
    list.iter()
        .enumerate()
        .map(|(j, m)| matrix(&format!("{field}[{j}]"), n, m))
        .collect()
}

impl PerturbationSpec {
    fn build(&self, field: &str, n: usize) -> Result<PerturbationProfile> {
        let amplitude = match (&self.amplitude, self.kind) {
            (None, ProfileKind::Zero) => Mat::zeros(n, n),
            (None, _) => return Err(Error::invalid(format!("{field}.amplitude"), "required")),
            (Some(a), _) => matrix(&format!("{field}.amplitude"), n, a)?,
        };
        let mut p = match self.kind {
            ProfileKind::Zero => PerturbationProfile::zero(n),
            ProfileKind::RationalDecay => PerturbationProfile::rational(amplitude),
            ProfileKind::ExponentialDecay => PerturbationProfile::exponential(
                amplitude,
                self.rate
                    .ok_or_else(|| Error::invalid(format!("{field}.rate"), "required"))?,
            ),
            ProfileKind::CompactBump => PerturbationProfile::bump(
                amplitude,
                self.center.unwrap_or(0.0),
                self.width
                    .ok_or_else(|| Error::invalid(format!("{field}.width"), "required"))?,
            ),
        };
        if self.kind == ProfileKind::Zero {
            p.amplitude = Mat::zeros(n, n);
        }
        p.validate(n).map_err(|m| Error::invalid(field, m))?;
        Ok(p)
    }

    pub fn from_profile(p: &PerturbationProfile) -> Self {
        let flat = |m: &Mat| m.transpose().iter().copied().collect::<Vec<_>>();
        match p.kind {
            ProfileKind::Zero => Self {
                kind: p.kind,
                amplitude: None,
                rate: None,
                width: None,
                center: None,
            },
            ProfileKind::RationalDecay => Self {
                kind: p.kind,
                amplitude: Some(flat(&p.amplitude)),
                rate: None,
                width: None,
                center: None,
            },
            ProfileKind::ExponentialDecay => Self {
                kind: p.kind,
                amplitude: Some(flat(&p.amplitude)),
                rate: Some(p.rate),
                width: None,
                center: None,
            },
            ProfileKind::CompactBump => Self {
                kind: p.kind,
                amplitude: Some(flat(&p.amplitude)),
                rate: None,
                width: Some(p.width),
                center: Some(p.center),
            },
        }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<DelaySystem> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::invalid("dim", "dimension must be positive"));
        }
        let count = self.delays.len();
        let plus = matrices("limit_plus", n, &self.limit_plus)?;
        let minus = match &self.limit_minus {
            Some(m) => matrices("limit_minus", n, m)?,
            None => plus.clone(),
        };
        let perturbations = match &self.perturbations {
            None => (0..count).map(|_| PerturbationProfile::zero(n)).collect(),
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(j, p)| p.build(&format!("perturbations[{j}]"), n))
                .collect::<Result<Vec<_>>>()?,
        };
        DelaySystem::new(n, self.delays.clone(), plus, minus, perturbations)
    }

    pub fn from_system(sys: &DelaySystem) -> Self {
        use super::Branch;
        let flat = |m: &Mat| m.transpose().iter().copied().collect::<Vec<_>>();
        Self {
            dim: sys.dim(),
            delays: sys.delays().to_vec(),
            limit_plus: sys.limit_matrices(Branch::Plus).iter().map(flat).collect(),
            limit_minus: Some(sys.limit_matrices(Branch::Minus).iter().map(flat).collect()),
            perturbations: Some(
                sys.perturbations()
                    .iter()
                    .map(PerturbationSpec::from_profile)
                    .collect(),
            ),
        }
    }
}
