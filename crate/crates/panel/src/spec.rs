//! Model specifications.

use std::collections::HashSet;

use crate::dataset::{PanelDataset, Term};
use crate::demean::FeSet;
use crate::error::{invalid, Result};
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    #[default]
    FeOls,
    Tsls,
    NegBin,
    LongDiff,
}

impl std::str::FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fe_ols" => Ok(Self::FeOls),
            "tsls" => Ok(Self::Tsls),
            "negbin" => Ok(Self::NegBin),
            "long_diff" => Ok(Self::LongDiff),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

/// Which covariance to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VcovKind {
    /// CR1 on the spec's cluster key.
    #[default]
    Cluster,
    Hc1,
    /// Inverse information (likelihood estimators only).
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub outcome: String,
    /// Included regressors. For `tsls` these are the exogenous controls.
    pub regressors: Vec<Term>,
    pub fe: Vec<FeSet>,
    pub cluster: String,
    pub transform: Transform,
    pub estimator: Estimator,
    pub vcov: VcovKind,
    pub endogenous: Option<Term>,
    pub instrument: Option<Term>,
    /// Offset column for count models.
    pub offset: Option<String>,
    /// (year0, year1) for long differences.
    pub long_diff_years: Option<(i32, i32)>,
    /// Rows to drop before fitting: (key, values).
    pub exclude: Vec<(String, Vec<String>)>,
}

impl ModelSpec {
    /// Fixed-effects OLS of `outcome` on `regressors`, unit and period
    /// effects, clustered by the dataset's cluster key.
    pub fn fe_ols(outcome: &str, regressors: &[&str]) -> Result<Self> {
        Ok(Self {
            outcome: outcome.to_string(),
            regressors: regressors.iter().map(|r| Term::parse(r)).collect::<Result<_>>()?,
            fe: vec![FeSet::single("unit"), FeSet::single("period")],
            cluster: "cluster".to_string(),
            transform: Transform::None,
            estimator: Estimator::FeOls,
            vcov: VcovKind::Cluster,
            endogenous: None,
            instrument: None,
            offset: None,
            long_diff_years: None,
            exclude: Vec::new(),
        })
    }

    pub fn with_fe(mut self, fe: Vec<FeSet>) -> Self {
        self.fe = fe;
        self
    }

    pub fn with_transform(mut self, t: Transform) -> Self {
        self.transform = t;
        self
    }

    pub fn with_cluster(mut self, key: &str) -> Self {
        self.cluster = key.to_string();
        self
    }

    pub fn with_exclusion(mut self, key: &str, values: &[&str]) -> Self {
        self.exclude.push((key.to_string(), values.iter().map(|v| v.to_string()).collect()));
        self
    }

    /// Just-identified 2SLS: `endogenous` instrumented by `instrument`,
    /// with `controls` as included exogenous regressors.
    pub fn tsls(outcome: &str, endogenous: &str, instrument: &str, controls: &[&str]) -> Result<Self> {
        let mut s = Self::fe_ols(outcome, controls)?;
        s.estimator = Estimator::Tsls;
        s.endogenous = Some(Term::parse(endogenous)?);
        s.instrument = Some(Term::parse(instrument)?);
        Ok(s)
    }

    pub fn negbin(outcome: &str, regressors: &[&str], offset: &str) -> Result<Self> {
        let mut s = Self::fe_ols(outcome, regressors)?;
        s.estimator = Estimator::NegBin;
        s.offset = Some(offset.to_string());
        Ok(s)
    }

    pub fn long_diff(outcome: &str, regressors: &[&str], year0: i32, year1: i32) -> Result<Self> {
        let mut s = Self::fe_ols(outcome, regressors)?;
        s.estimator = Estimator::LongDiff;
        s.fe = Vec::new();
        s.vcov = VcovKind::Hc1;
        s.long_diff_years = Some((year0, year1));
        Ok(s)
    }

    pub fn regressor_names(&self) -> Vec<String> {
        self.regressors.iter().map(Term::to_string).collect()
    }

    /// Checks internal consistency of the spec.
    pub fn validate(&self) -> Result<()> {
        let names = self.regressor_names();
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return invalid(format!("regressor `{n}` listed twice"));
            }
        }
        if self.estimator == Estimator::Tsls {
            let (Some(endog), Some(inst)) = (&self.endogenous, &self.instrument) else {
                return invalid("tsls needs an endogenous term and an excluded instrument");
            };
            if names.contains(&inst.to_string()) {
                return invalid("excluded instrument also appears among the regressors");
            }
            if names.contains(&endog.to_string()) {
                return invalid("endogenous term also appears among the exogenous regressors");
            }
        }
        if self.estimator == Estimator::NegBin && self.offset.is_none() {
            return invalid("negbin needs an offset column");
        }
        if self.estimator == Estimator::LongDiff && self.long_diff_years.is_none() {
            return invalid("long_diff needs (year0, year1)");
        }
        Ok(())
    }

    /// The estimation sample after exclusions.
    pub fn sample(&self, data: &PanelDataset) -> Result<PanelDataset> {
        let mut d = data.clone();
        for (key, values) in &self.exclude {
            d = d.exclude(key, values)?;
        }
        Ok(d)
    }
}
