use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, EstimationError, Result};
use crate::report::EstimateReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Joint test that the named coefficients are all zero: W = b'V⁻¹b against
/// a chi-square with q degrees of freedom.
pub fn wald_joint_test(report: &EstimateReport, names: &[&str]) -> Result<WaldTest> {
    if names.is_empty() {
        return invalid("joint test needs at least one coefficient");
    }
    let idx: Vec<usize> = names.iter().map(|n| report.index_of(n)).collect::<Result<_>>()?;
    let q = idx.len();
    let b = DVector::from_iterator(q, idx.iter().map(|&i| report.coef[i]));
    let v = DMatrix::from_fn(q, q, |a, c| report.vcov[(idx[a], idx[c])]);
    let inv = v
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| EstimationError::RankDeficient(names.iter().map(|s| s.to_string()).collect()))?;
    let statistic = (b.transpose() * inv * &b)[(0, 0)];
    let chi = ChiSquared::new(q as f64).map_err(|e| EstimationError::InvalidInput(e.to_string()))?;
    Ok(WaldTest { statistic, df: q, p_value: chi.sf(statistic) })
}
