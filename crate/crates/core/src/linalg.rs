//! Small dense/banded linear-algebra helpers not covered by nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive definite band matrix.
///
/// Only the lower band is stored: `band[i][k]` is entry `(i, i - bw + k)`.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factor the matrix whose lower band entries are given in `band`
    /// (row-major, `bw + 1` per row, diagonal last).
    pub fn factor(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        assert_eq!(band.len(), n * w);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // entry (i, j) lives at band[i*w + (j + bw - i)]
                let mut sum = band[i * w + j + bw - i];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= band[i * w + k + bw - i] * band[j * w + k + bw - j];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::KernelObstruction(format!(
                            "normal matrix not positive definite at row {i} (pivot {sum:.3e})"
                        )));
                    }
                    band[i * w + bw] = sum.sqrt();
                } else {
                    band[i * w + j + bw - i] = sum / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest and largest diagonal entry of the factor.
    pub fn pivot_range(&self) -> (f64, f64) {
        let w = self.bw + 1;
        (0..self.n)
            .map(|i| self.band[i * w + self.bw])
            .fold((f64::INFINITY, 0.0), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i * w + k + bw - i] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= self.band[k * w + i + bw - k] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
    }
}

/// Max-abs-row-sum norm of a dense matrix.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    crate::system::mat_norm(m)
}

pub fn vec_inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Hager-Higham estimate of `‖S‖_1` for an operator known only through
/// products with `S` and `Sᵀ`. Returns the estimate and whether the iteration
/// stopped on its own before `max_iter`.
pub fn norm1_estimate(
    n: usize,
    max_iter: usize,
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    mut apply_t: impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> (f64, bool) {
    if n == 0 {
        return (0.0, true);
    }
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..max_iter {
        let y = apply(&x);
        let new_est = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = apply_t(&xi);
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bj, bm), (j, v)| {
                if v.abs() > bm {
                    (j, v.abs())
                } else {
                    (bj, bm)
                }
            });
        let ztx = z.dot(&x);
        if new_est <= est || zmax <= ztx || j == last_j {
            est = est.max(new_est);
            return (alternative(n, est, &mut apply), true);
        }
        est = new_est;
        last_j = j;
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    (alternative(n, est, &mut apply), false)
}

fn alternative(
    n: usize,
    est: f64,
    apply: &mut impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> f64 {
    if n < 2 {
        return est;
    }
    let b = DVector::from_fn(n, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sign * (1.0 + i as f64 / (n - 1) as f64)
    });
    let alt = 2.0 * apply(&b).iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
    est.max(alt)
}

/// `‖S‖_∞ = ‖Sᵀ‖_1`.
pub fn norm_inf_estimate(
    n: usize,
    max_iter: usize,
    apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    apply_t: impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> (f64, bool) {
    norm1_estimate(n, max_iter, apply_t, apply)
}

/// Least-squares line fit `y ≈ c0 + c1 x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let c1 = sxy / sxx;
    Some((my - c1 * mx, c1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_cholesky_matches_dense() {
        let n = 12;
        let bw = 2;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let d = (i as i64 - j as i64).abs();
            match d {
                0 => 6.0 + i as f64 * 0.1,
                1 => -1.5,
                2 => 0.4,
                _ => 0.0,
            }
        });
        let mut band = vec![0.0; n * (bw + 1)];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                band[i * (bw + 1) + j + bw - i] = a[(i, j)];
            }
        }
        let f = BandedCholesky::factor(n, bw, band).unwrap();
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let mut x = b.as_slice().to_vec();
        f.solve_in_place(&mut x);
        let r = &a * DVector::from_vec(x) - b;
        assert!(r.amax() < 1e-13);
    }

    #[test]
    fn indefinite_is_rejected() {
        assert!(BandedCholesky::factor(2, 1, vec![0.0, 1.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn norm_estimate_is_a_tight_lower_bound() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, -1.0, 4.0, 0.0, 0.1]);
        let (est, _) = norm_inf_estimate(3, 50, |x| &a * x, |x| a.transpose() * x);
        let exact = inf_norm(&a);
        assert!(est <= exact + 1e-12 && est >= 0.75 * exact, "{est} vs {exact}");
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -7.0, 2.0]));
        let (est, converged) = norm_inf_estimate(3, 50, |x| &d * x, |x| d.transpose() * x);
        assert!(converged);
        assert!((est - 7.0).abs() < 1e-12);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (c0, c1) = line_fit(&x, &y).unwrap();
        assert!((c0 - 2.0).abs() < 1e-12 && (c1 + 0.5).abs() < 1e-12);
    }
}
