use crate::error::{Error, Result};
use crate::linalg::line_fit;

/// Fit `|G(x)| <= K e^{-a x}` to samples `(x, |G(x)|)` with `x >= 0`.
///
/// The slope comes from a least-squares line through the log of the monotone
/// envelope `e(x) = max{|G(x')| : x' >= x}`, restricted to envelope values above
/// `1e-10·max`. `K` is then the smallest constant making the bound hold at
/// every sample.
pub fn fit_exponential_bound(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    let max = samples.iter().map(|p| p.1).fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateFit("all samples are zero".into()));
    }
    let mut sorted: Vec<(f64, f64)> = samples.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let floor = 1e-10 * max;
    let mut running = 0.0f64;
    let mut xs = Vec::with_capacity(sorted.len());
    let mut ys = Vec::with_capacity(sorted.len());
    for &(x, v) in &sorted {
        running = running.max(v);
        if running > floor {
            xs.push(x);
            ys.push(running.ln());
        }
    }
    let (_, slope) = line_fit(&xs, &ys).ok_or_else(|| {
        Error::DegenerateFit("fewer than two distinct abscissae above the noise floor".into())
    })?;
    let a = -slope;
    let k = samples
        .iter()
        .map(|&(x, v)| v * (a * x).exp())
        .fold(0.0, f64::max);
    Ok((k, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponentials() {
        let pts: Vec<(f64, f64)> = (-320..=640)
            .map(|i| {
                let t = i as f64 / 64.0;
                (t.abs(), if t >= 0.0 { (-t).exp() } else { 0.0 })
            })
            .collect();
        let (k, a) = fit_exponential_bound(&pts).unwrap();
        assert!((k - 1.0).abs() < 0.02 && (a - 1.0).abs() < 0.02);

        let pts: Vec<(f64, f64)> = (-640..=640)
            .map(|i| {
                let t = i as f64 / 64.0;
                (t.abs(), 3.0 * (-0.5 * t.abs()).exp())
            })
            .collect();
        let (k, a) = fit_exponential_bound(&pts).unwrap();
        assert!((k - 3.0).abs() < 0.06 && (a - 0.5).abs() < 0.01);
    }

    #[test]
    fn bound_holds_everywhere() {
        let pts: Vec<(f64, f64)> = (0..500)
            .map(|i| {
                let x = i as f64 * 0.05;
                (x, (-0.3 * x).exp() * (2.0 * x).cos().abs())
            })
            .collect();
        let (k, a) = fit_exponential_bound(&pts).unwrap();
        assert!((a - 0.3).abs() < 0.05);
        for (x, v) in pts {
            assert!(v <= k * (-a * x).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zeros_are_degenerate() {
        let err = fit_exponential_bound(&[(0.0, 0.0), (1.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit(_)));
    }
}
