//! Fixed-effects OLS (within estimator) with clustered inference.
//!
//! Covers the baseline exposure design, component decompositions, event
//! studies (exposure times period indicators) and triple interactions under
//! any number of absorbed fixed-effect sets.

use nalgebra::DMatrix;

use crate::dataset::PanelDataset;
use crate::demean::{dense_ids, Absorber, DemeanOptions, FeSet};
use crate::error::{invalid, EstimationError, Result};
use crate::linalg::{columns_to_matrix, dot, least_squares};
use crate::report::EstimateReport;
use crate::spec::{Estimator, ModelSpec, VcovKind};
use crate::transform::transform_column;
use crate::vcov::{cluster_vcov, hc1_vcov};

/// A within-transformed regression problem, ready to solve. Keeping the
/// absorber and transformed columns around lets callers swap one regressor
/// (permutation placebos, top-K variants) without redoing the rest.
#[derive(Debug, Clone)]
pub struct FeOlsProblem {
    absorber: Absorber,
    sqrt_w: Vec<f64>,
    y: Vec<f64>,
    cols: Vec<Vec<f64>>,
    raw_norms: Vec<f64>,
    names: Vec<String>,
    clusters: Option<Vec<usize>>,
    vcov: VcovKind,
    iterations: usize,
}

impl FeOlsProblem {
    pub fn new(spec: &ModelSpec, data: &PanelDataset) -> Result<Self> {
        spec.validate()?;
        if spec.estimator != Estimator::FeOls {
            return invalid("FeOlsProblem requires the fe_ols estimator");
        }
        let sample = spec.sample(data)?;
        if sample.is_empty() {
            return Err(EstimationError::InsufficientData("empty sample after filters".into()));
        }
        let y = transform_column(&sample.column(&spec.outcome)?, spec.transform)?;
        let raw: Vec<Vec<f64>> = spec.regressors.iter().map(|t| sample.term(t)).collect::<Result<_>>()?;
        Self::from_parts(spec, &sample, y, raw, spec.regressor_names())
    }

    pub(crate) fn from_parts(
        spec: &ModelSpec,
        sample: &PanelDataset,
        y: Vec<f64>,
        raw: Vec<Vec<f64>>,
        names: Vec<String>,
    ) -> Result<Self> {
        let absorber = build_absorber(&spec.fe, sample)?;
        let sqrt_w: Vec<f64> = sample.weights().iter().map(|w| w.sqrt()).collect();
        let mut iterations = 0;
        let mut transform = |x: &[f64]| -> Result<Vec<f64>> {
            let d = absorber.demean(x)?;
            iterations = iterations.max(d.iterations);
            Ok(d.values.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect())
        };
        let y_t = transform(&y)?;
        let mut cols = Vec::with_capacity(raw.len());
        let mut raw_norms = Vec::with_capacity(raw.len());
        for x in &raw {
            raw_norms.push(weighted_norm(x, &sqrt_w));
            cols.push(transform(x)?);
        }
        let clusters = match spec.vcov {
            VcovKind::Cluster => {
                let labels = sample.key(&spec.cluster)?;
                Some(dense_ids(labels.iter().map(String::as_str)))
            }
            VcovKind::Hc1 => None,
            VcovKind::Model => return invalid("model-based covariance applies to likelihood estimators only"),
        };
        Ok(Self { absorber, sqrt_w, y: y_t, cols, raw_norms, names, clusters, vcov: spec.vcov, iterations })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn fit(&self) -> Result<EstimateReport> {
        self.solve(&self.cols, &self.raw_norms, true)
    }

    /// Refits with regressor `j` replaced by `raw` (untransformed values).
    pub fn fit_with_column(&self, j: usize, raw: &[f64]) -> Result<EstimateReport> {
        let (cols, norms) = self.replaced(j, raw)?;
        self.solve(&cols, &norms, true)
    }

    /// Coefficient on regressor `j` after replacing it with `raw`; skips the
    /// covariance, which makes it the cheap path for placebo loops.
    pub fn coef_with_column(&self, j: usize, raw: &[f64]) -> Result<f64> {
        let (cols, norms) = self.replaced(j, raw)?;
        let ls = least_squares(&cols, &self.y, &self.names, &norms)?;
        Ok(ls.coef[j])
    }

    fn replaced(&self, j: usize, raw: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if j >= self.cols.len() {
            return invalid(format!("regressor index {j} out of range"));
        }
        let d = self.absorber.demean(raw)?;
        let mut cols = self.cols.clone();
        cols[j] = d.values.iter().zip(&self.sqrt_w).map(|(v, s)| v * s).collect();
        let mut norms = self.raw_norms.clone();
        norms[j] = weighted_norm(raw, &self.sqrt_w);
        Ok((cols, norms))
    }

    fn solve(&self, cols: &[Vec<f64>], norms: &[f64], with_vcov: bool) -> Result<EstimateReport> {
        let ls = least_squares(cols, &self.y, &self.names, norms)?;
        let design = columns_to_matrix(cols);
        let n = self.y.len();
        let k = cols.len();
        let vcov = if !with_vcov {
            DMatrix::zeros(k, k)
        } else {
            match (&self.clusters, self.vcov) {
                (Some(c), VcovKind::Cluster) => cluster_vcov(&ls.residuals, &design, c)?,
                _ => hc1_vcov(&ls.residuals, &design)?,
            }
        };
        let mut report = EstimateReport::new(self.names.clone(), ls.coef.iter().copied().collect(), vcov, n);
        report.n_clusters = self.clusters.as_ref().map(|c| c.iter().max().map_or(0, |m| m + 1));
        report.singletons = self.absorber.singletons();
        report.fe_iterations = self.iterations;
        report.residuals = ls.residuals.iter().zip(&self.sqrt_w).map(|(e, s)| e / s).collect();
        Ok(report)
    }
}

fn weighted_norm(x: &[f64], sqrt_w: &[f64]) -> f64 {
    let v: Vec<f64> = x.iter().zip(sqrt_w).map(|(a, s)| a * s).collect();
    dot(&v, &v).sqrt()
}

/// Absorber for `fe`; with no fixed effects, a single constant group so the
/// regression keeps an intercept.
pub(crate) fn build_absorber(fe: &[FeSet], sample: &PanelDataset) -> Result<Absorber> {
    if fe.is_empty() {
        return Absorber::from_ids(vec![vec![0; sample.len()]], sample.weights().to_vec(), DemeanOptions::default());
    }
    Absorber::new(sample, fe, DemeanOptions::default())
}

/// Fits a fixed-effects OLS model.
pub fn fit_fe_ols(spec: &ModelSpec, data: &PanelDataset) -> Result<EstimateReport> {
    FeOlsProblem::new(spec, data)?.fit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demean::FeSet;

    fn small_panel() -> PanelDataset {
        let mut u = Vec::new();
        let mut p = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..6 {
            for t in 0..4 {
                u.push(format!("c{i}"));
                p.push(2018 + t);
                let xv = ((i * 3 + t * 5) % 7) as f64 * 0.5 + i as f64 * 0.1;
                x.push(xv);
                let noise = (((i * 11 + t * 13) % 9) as f64 - 4.0) * 0.05;
                y.push(1.0 + i as f64 * 0.7 - t as f64 * 0.2 + 2.0 * xv + noise);
            }
        }
        PanelDataset::new(u, p, None)
            .unwrap()
            .with_column("x", x)
            .unwrap()
            .with_column("y", y)
            .unwrap()
            .with_column("const", vec![3.0; 24])
            .unwrap()
    }

    #[test]
    fn constant_outcome_gives_zero_slopes() {
        let d = small_panel();
        let spec = ModelSpec::fe_ols("const", &["x"]).unwrap();
        let r = fit_fe_ols(&spec, &d).unwrap();
        assert!(r.coef[0].abs() < 1e-12);
    }

    #[test]
    fn absorbed_regressor_is_rank_error() {
        let d = small_panel();
        let spec = ModelSpec::fe_ols("y", &["x", "const"]).unwrap();
        match fit_fe_ols(&spec, &d) {
            Err(EstimationError::RankDeficient(cols)) => assert_eq!(cols, vec!["const".to_string()]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn empty_sample_rejected() {
        let d = small_panel();
        let all: Vec<&str> = (0..6).map(|i| ["c0", "c1", "c2", "c3", "c4", "c5"][i]).collect();
        let spec = ModelSpec::fe_ols("y", &["x"]).unwrap().with_exclusion("unit", &all);
        assert!(matches!(fit_fe_ols(&spec, &d), Err(EstimationError::InsufficientData(_))));
    }

    #[test]
    fn replacing_column_matches_fresh_fit() {
        let mut d = small_panel();
        let spec = ModelSpec::fe_ols("y", &["x"]).unwrap();
        let problem = FeOlsProblem::new(&spec, &d).unwrap();
        let alt: Vec<f64> = (0..24).map(|i| ((i * 5) % 11) as f64).collect();
        let b = problem.coef_with_column(0, &alt).unwrap();
        d.set_column("x", alt).unwrap();
        let fresh = fit_fe_ols(&spec, &d).unwrap();
        assert!((b - fresh.coef[0]).abs() < 1e-12);
    }

    #[test]
    fn unit_only_fe() {
        let d = small_panel();
        let spec = ModelSpec::fe_ols("y", &["x"]).unwrap().with_fe(vec![FeSet::single("unit")]);
        let r = fit_fe_ols(&spec, &d).unwrap();
        assert!((r.coef[0] - 2.0).abs() < 0.2);
        assert_eq!(r.n_clusters, Some(6));
    }
}
