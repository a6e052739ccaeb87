use crate::error::{Error, Result};

/// Direction of the shift in `ω(t ± r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftSign {
    Plus,
    Minus,
}

/// `ω(t) = 1 / (1 + t²)`.
pub fn omega(t: f64) -> f64 {
    1.0 / (1.0 + t * t)
}

/// `k(t) = -2t / (1 + t²)`, so that `ω' = k ω`.
pub fn k_rate(t: f64) -> f64 {
    -2.0 * t / (1.0 + t * t)
}

pub fn weight_eval(t: f64) -> Result<(f64, f64)> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("weight evaluated at non-finite t = {t}")));
    }
    Ok((omega(t), k_rate(t)))
}

/// `M^±(t) = (1 + t²) / (1 + (t ± r)²)`.
pub fn shift_factor(t: f64, r: f64, sign: ShiftSign) -> f64 {
    let u = match sign {
        ShiftSign::Plus => t + r,
        ShiftSign::Minus => t - r,
    };
    (1.0 + t * t) / (1.0 + u * u)
}
