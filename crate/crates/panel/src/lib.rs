//! Panel estimators for exposure designs.
//!
//! Multi-way fixed-effects OLS absorbed by alternating projections, CR1 and
//! HC1 sandwich covariances, just-identified 2SLS with a cluster-robust
//! first-stage F, joint Wald tests, outcome transforms, an NB2 count model
//! with explicit dummies and a cross-sectional long-difference estimator.

pub mod dataset;
pub mod demean;
pub mod error;
pub mod linalg;
pub mod long_diff;
pub mod negbin;
pub mod ols;
pub mod report;
pub mod spec;
pub mod transform;
pub mod tsls;
pub mod vcov;
pub mod wald;

pub use dataset::{event_study_terms, Factor, PanelDataset, Term};
pub use demean::{demean_fe, Absorber, DemeanOptions, Demeaned, FeSet};
pub use error::{EstimationError, Result};
pub use long_diff::fit_long_difference;
pub use negbin::{fit_negbin, fit_negbin_full, NegBinFit};
pub use ols::{fit_fe_ols, FeOlsProblem};
pub use report::{Convergence, EstimateReport, FirstStage};
pub use spec::{Estimator, ModelSpec, VcovKind};
pub use transform::{transform_column, transform_outcome, Transform};
pub use tsls::fit_tsls;
pub use vcov::{cluster_vcov, hc1_vcov};
pub use wald::{wald_joint_test, WaldTest};

/// Dispatches on `spec.estimator`.
pub fn fit(spec: &ModelSpec, data: &PanelDataset) -> Result<EstimateReport> {
    match spec.estimator {
        Estimator::FeOls => fit_fe_ols(spec, data),
        Estimator::Tsls => fit_tsls(spec, data),
        Estimator::NegBin => fit_negbin(spec, data),
        Estimator::LongDiff => fit_long_difference(spec, data),
    }
}
