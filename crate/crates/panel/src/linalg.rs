//! Dense least-squares helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, EstimationError, Result};

/// Relative tolerance below which a column counts as a linear combination of
/// the columns before it (or as absorbed by fixed effects).
pub const COLLINEAR_TOL: f64 = 1e-9;

/// Builds an n x k matrix from column vectors.
pub fn columns_to_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Names the columns that are (near) linear combinations of earlier columns,
/// or whose norm collapsed relative to `reference_norms` (e.g. a regressor
/// fully absorbed by fixed effects).
pub fn collinear_columns(cols: &[Vec<f64>], names: &[String], reference_norms: &[f64]) -> Vec<String> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut flagged = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let norm = dot(col, col).sqrt();
        let reference = reference_norms.get(j).copied().unwrap_or(norm);
        if !(norm > 0.0) || norm <= COLLINEAR_TOL * reference || !norm.is_finite() {
            flagged.push(names[j].clone());
            continue;
        }
        let mut r = col.clone();
        for q in &basis {
            let c = dot(q, &r);
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let rn = dot(&r, &r).sqrt();
        if rn <= COLLINEAR_TOL * norm {
            flagged.push(names[j].clone());
        } else {
            r.iter_mut().for_each(|a| *a /= rn);
            basis.push(r);
        }
    }
    flagged
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordinary least squares pieces on an already-transformed design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// Solves min ||y - X b||^2 after checking the design for collinearity.
pub fn least_squares(
    cols: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    reference_norms: &[f64],
) -> Result<LeastSquares> {
    let n = y.len();
    let k = cols.len();
    if k == 0 {
        return invalid("design has no columns");
    }
    if cols.iter().any(|c| c.len() != n) {
        return invalid("design columns and outcome differ in length");
    }
    if n < k {
        return Err(EstimationError::InsufficientData(format!("{n} rows for {k} regressors")));
    }
    let bad = collinear_columns(cols, names, reference_norms);
    if !bad.is_empty() {
        return Err(EstimationError::RankDeficient(bad));
    }
    let x = columns_to_matrix(cols);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    let xtx_inv = invert_spd(&xtx, names)?;
    let coef = &xtx_inv * xty;
    let fitted_v = &x * &coef;
    let fitted: Vec<f64> = fitted_v.iter().copied().collect();
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(LeastSquares { coef, xtx_inv, residuals, fitted })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn invert_spd(m: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| EstimationError::RankDeficient(names.to_vec()))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn detects_exact_linear_combination() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![1.0, 0.0, 1.0, 0.0];
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let bad = collinear_columns(&[a, b, c], &names(3), &[]);
        assert_eq!(bad, vec!["x2".to_string()]);
    }

    #[test]
    fn zero_column_flagged() {
        let bad = collinear_columns(&[vec![0.0; 3]], &names(1), &[]);
        assert_eq!(bad, vec!["x0".to_string()]);
    }

    #[test]
    fn exact_fit_recovers_coefficients() {
        let x0 = vec![1.0, 2.0, 3.0, 5.0, 7.0];
        let x1 = vec![0.5, -1.0, 2.0, 0.0, 1.0];
        let y: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| 3.0 * a - 2.0 * b).collect();
        let ls = least_squares(&[x0, x1], &y, &names(2), &[]).unwrap();
        assert!((ls.coef[0] - 3.0).abs() < 1e-12);
        assert!((ls.coef[1] + 2.0).abs() < 1e-12);
        assert!(ls.residuals.iter().all(|r| r.abs() < 1e-12));
    }
}
