//! Outcome transforms for count-per-1,000 outcomes.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    #[default]
    None,
    /// log(0.1 + y)
    Log01,
    /// log(1 + y)
    Log1p,
    /// Inverse hyperbolic sine, log(y + sqrt(y^2 + 1)).
    Asinh,
}

impl std::str::FromStr for Transform {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "log0.1" => Ok(Self::Log01),
            "log1p" => Ok(Self::Log1p),
            "asinh" => Ok(Self::Asinh),
            other => Err(format!("unknown transform `{other}`")),
        }
    }
}

/// Applies `kind` to one outcome value. Negative inputs are rejected for
/// every transform other than `None`.
pub fn transform_outcome(y: f64, kind: Transform) -> Result<f64> {
    if kind == Transform::None {
        return Ok(y);
    }
    if !(y >= 0.0) {
        return invalid(format!("transformed outcome must be nonnegative, got {y}"));
    }
    Ok(match kind {
        Transform::None => y,
        Transform::Log01 => (0.1 + y).ln(),
        Transform::Log1p => y.ln_1p(),
        Transform::Asinh => y.asinh(),
    })
}

pub fn transform_column(y: &[f64], kind: Transform) -> Result<Vec<f64>> {
    y.iter().map(|&v| transform_outcome(v, kind)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps() {
        assert!((transform_outcome(0.0, Transform::Log01).unwrap() - 0.1f64.ln()).abs() < 1e-15);
        assert!((transform_outcome(0.0, Transform::Log01).unwrap() + 2.302585).abs() < 1e-6);
        assert_eq!(transform_outcome(0.0, Transform::Log1p).unwrap(), 0.0);
        assert_eq!(transform_outcome(0.0, Transform::Asinh).unwrap(), 0.0);
    }

    #[test]
    fn asinh_matches_log_form() {
        let v = transform_outcome(10.0, Transform::Asinh).unwrap();
        assert!((v - (10.0 + 101f64.sqrt()).ln()).abs() < 1e-14);
        assert!((v - 2.998223).abs() < 1e-6);
        // odd function on the raw definition
        assert_eq!((-3.0f64).asinh(), -(3.0f64.asinh()));
    }

    #[test]
    fn negative_rejected() {
        assert!(transform_outcome(-1.0, Transform::Log1p).is_err());
        assert_eq!(transform_outcome(-1.0, Transform::None).unwrap(), -1.0);
    }
}
