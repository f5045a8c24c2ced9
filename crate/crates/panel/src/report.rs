use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{EstimationError, Result};

/// First-stage summary for a just-identified IV fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStage {
    pub coef: f64,
    pub se: f64,
    /// Cluster-robust Wald statistic on the excluded instrument. With one
    /// endogenous regressor and one instrument this is the Kleibergen–Paap
    /// rk Wald F.
    pub f_stat: f64,
}

/// Diagnostics from iterative estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: Option<f64>,
    pub dispersion: Option<f64>,
    pub dispersion_se: Option<f64>,
    /// Dispersion ran to the zero boundary; the fit is the Poisson limit.
    pub poisson_limit: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub n_obs: usize,
    /// `None` when the covariance is not clustered.
    pub n_clusters: Option<usize>,
    pub singletons: usize,
    /// Rows or units dropped before estimation (all-zero units, missing years).
    pub dropped: usize,
    pub fe_iterations: usize,
    pub first_stage: Option<FirstStage>,
    pub convergence: Option<Convergence>,
    /// Residuals of the full model, in estimation-sample row order.
    pub residuals: Vec<f64>,
}

impl EstimateReport {
    /// Fills SE, t and two-sided normal p-values from the covariance diagonal.
    pub fn new(names: Vec<String>, coef: Vec<f64>, vcov: DMatrix<f64>, n_obs: usize) -> Self {
        let normal = Normal::standard();
        let se: Vec<f64> = (0..coef.len()).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
        let t: Vec<f64> = coef.iter().zip(&se).map(|(b, s)| b / s).collect();
        let p = t
            .iter()
            .map(|t| if t.is_finite() { 2.0 * normal.sf(t.abs()) } else { f64::NAN })
            .collect();
        Self {
            names,
            coef,
            vcov,
            se,
            t,
            p,
            n_obs,
            n_clusters: None,
            singletons: 0,
            dropped: 0,
            fe_iterations: 0,
            first_stage: None,
            convergence: None,
            residuals: Vec::new(),
        }
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| EstimationError::UnknownColumn(name.to_string()))
    }

    pub fn coef_of(&self, name: &str) -> Result<f64> {
        Ok(self.coef[self.index_of(name)?])
    }

    pub fn se_of(&self, name: &str) -> Result<f64> {
        Ok(self.se[self.index_of(name)?])
    }

    /// Normal-reference 95% interval.
    pub fn ci95(&self, name: &str) -> Result<(f64, f64)> {
        let j = self.index_of(name)?;
        Ok((self.coef[j] - 1.96 * self.se[j], self.coef[j] + 1.96 * self.se[j]))
    }
}
