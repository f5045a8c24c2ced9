//! Sandwich covariance estimators.
//!
//! `cluster_vcov` is the CR1 estimator
//!
//! ```text
//! V = c · (X'X)⁻¹ (Σ_g X_g' e_g e_g' X_g) (X'X)⁻¹,   c = G/(G−1) · (N−1)/(N−K)
//! ```
//!
//! With every row in its own cluster this reduces to HC1, c = N/(N−K).

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::invert_spd;

/// Number of distinct labels.
pub fn count_clusters<C: Hash + Eq>(clusters: &[C]) -> usize {
    let mut seen: HashMap<&C, ()> = HashMap::new();
    clusters.iter().for_each(|c| {
        seen.insert(c, ());
    });
    seen.len()
}

/// Sum over clusters of outer products of per-cluster score sums.
/// `scores` is n x k (row i = score contribution of observation i).
pub fn cluster_meat<C: Hash + Eq>(scores: &DMatrix<f64>, clusters: &[C]) -> (DMatrix<f64>, usize) {
    let k = scores.ncols();
    let mut index: HashMap<&C, usize> = HashMap::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    for (i, c) in clusters.iter().enumerate() {
        let next = sums.len();
        let g = *index.entry(c).or_insert(next);
        if g == next {
            sums.push(vec![0.0; k]);
        }
        for j in 0..k {
            sums[g][j] += scores[(i, j)];
        }
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in &sums {
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    (meat, sums.len())
}

fn scores(residuals: &[f64], design: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| design[(i, j)] * residuals[i])
}

fn check_shapes(residuals: &[f64], design: &DMatrix<f64>) -> Result<()> {
    let (n, k) = design.shape();
    if residuals.len() != n {
        return invalid(format!("{} residuals for a design with {n} rows", residuals.len()));
    }
    if n <= k {
        return invalid(format!("need more rows ({n}) than regressors ({k})"));
    }
    Ok(())
}

/// CR1 cluster-robust covariance. Fails when fewer than two clusters exist.
pub fn cluster_vcov<C: Hash + Eq>(residuals: &[f64], design: &DMatrix<f64>, clusters: &[C]) -> Result<DMatrix<f64>> {
    check_shapes(residuals, design)?;
    if clusters.len() != residuals.len() {
        return invalid("cluster labels and residuals differ in length");
    }
    let (n, k) = design.shape();
    let (meat, g) = cluster_meat(&scores(residuals, design), clusters);
    if g < 2 {
        return invalid(format!("cluster-robust covariance needs at least 2 clusters, found {g}"));
    }
    let names: Vec<String> = (0..k).map(|j| format!("column {j}")).collect();
    let bread = invert_spd(&(design.transpose() * design), &names)?;
    let (gf, nf, kf) = (g as f64, n as f64, k as f64);
    let c = gf / (gf - 1.0) * (nf - 1.0) / (nf - kf);
    Ok(symmetrize(&bread * meat * &bread * c))
}

/// HC1 heteroskedasticity-robust covariance.
pub fn hc1_vcov(residuals: &[f64], design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(residuals, design)?;
    let (n, k) = design.shape();
    let s = scores(residuals, design);
    let meat = s.transpose() * &s;
    let names: Vec<String> = (0..k).map(|j| format!("column {j}")).collect();
    let bread = invert_spd(&(design.transpose() * design), &names)?;
    let c = n as f64 / (n as f64 - k as f64);
    Ok(symmetrize(&bread * meat * &bread * c))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.2, 1.0, -0.4, 1.0, 1.3, 1.0, 0.8, 1.0, -1.1, 1.0, 0.1]);
        let e = vec![0.3, -0.2, 0.5, -0.7, 0.1, 0.05];
        (x, e)
    }

    #[test]
    fn singleton_clusters_equal_hc1() {
        let (x, e) = design();
        let ids: Vec<usize> = (0..6).collect();
        let a = cluster_vcov(&e, &x, &ids).unwrap();
        let b = hc1_vcov(&e, &x).unwrap();
        assert!((a - b).abs().max() < 1e-14);
    }

    #[test]
    fn one_cluster_rejected() {
        let (x, e) = design();
        assert!(cluster_vcov(&e, &x, &[0; 6]).is_err());
    }
}
