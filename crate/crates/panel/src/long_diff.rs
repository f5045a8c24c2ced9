//! Cross-sectional long difference: (y at year1 − y at year0) regressed on
//! exposure and year0 controls with an intercept, HC1 standard errors.

use std::collections::BTreeMap;

use crate::dataset::PanelDataset;
use crate::error::{invalid, EstimationError, Result};
use crate::linalg::{columns_to_matrix, least_squares};
use crate::report::EstimateReport;
use crate::spec::{Estimator, ModelSpec};
use crate::transform::transform_column;
use crate::vcov::hc1_vcov;

pub const INTERCEPT: &str = "_cons";

pub fn fit_long_difference(spec: &ModelSpec, data: &PanelDataset) -> Result<EstimateReport> {
    spec.validate()?;
    if spec.estimator != Estimator::LongDiff {
        return invalid("fit_long_difference requires the long_diff estimator");
    }
    let (year0, year1) = spec.long_diff_years.expect("validated");
    let sample = spec.sample(data)?;
    let y = transform_column(&sample.column(&spec.outcome)?, spec.transform)?;
    let regs: Vec<Vec<f64>> = spec.regressors.iter().map(|t| sample.term(t)).collect::<Result<_>>()?;

    // (unit, group) -> (row at year0, row at year1)
    let mut cells: BTreeMap<(String, String), (Option<usize>, Option<usize>)> = BTreeMap::new();
    let groups = sample.groups();
    for i in 0..sample.len() {
        let p = sample.periods()[i];
        if p != year0 && p != year1 {
            continue;
        }
        let key = (sample.units()[i].clone(), groups.map(|g| g[i].clone()).unwrap_or_default());
        let e = cells.entry(key).or_default();
        if p == year0 {
            e.0 = Some(i);
        } else {
            e.1 = Some(i);
        }
    }
    let all_units: std::collections::BTreeSet<(String, String)> = (0..sample.len())
        .map(|i| (sample.units()[i].clone(), groups.map(|g| g[i].clone()).unwrap_or_default()))
        .collect();
    let pairs: Vec<(usize, usize)> = cells.values().filter_map(|&(a, b)| Some((a?, b?))).collect();
    let dropped = all_units.len() - pairs.len();

    let k = regs.len() + 1;
    if pairs.len() <= k {
        return Err(EstimationError::InsufficientData(format!(
            "{} units with both {year0} and {year1} for {k} parameters",
            pairs.len()
        )));
    }
    let dy: Vec<f64> = pairs.iter().map(|&(a, b)| y[b] - y[a]).collect();
    let mut cols: Vec<Vec<f64>> = regs.iter().map(|r| pairs.iter().map(|&(a, _)| r[a]).collect()).collect();
    cols.push(vec![1.0; pairs.len()]);
    let mut names = spec.regressor_names();
    names.push(INTERCEPT.to_string());
    let ls = least_squares(&cols, &dy, &names, &[])?;
    let vcov = hc1_vcov(&ls.residuals, &columns_to_matrix(&cols))?;
    let mut report = EstimateReport::new(names, ls.coef.iter().copied().collect(), vcov, pairs.len());
    report.dropped = dropped;
    report.residuals = ls.residuals;
    Ok(report)
}
