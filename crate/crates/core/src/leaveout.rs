//! Lender leave-out predicted origin payments.
//!
//! Lender pricing positions are estimated by state from shock-period
//! originations, averaged over the other states, and combined with each
//! county's pre-period lender mix.

use std::collections::{BTreeMap, BTreeSet};

use lockin_panel::demean::{dense_ids, Absorber, DemeanOptions};
use lockin_panel::linalg::least_squares;

use crate::error::{invalid, CoreError, Result};
use crate::mortgage::{normalized_payment, LoanSet};

/// State of a 5-digit county FIPS code: its first two digits.
pub fn fips_state(county: &str) -> Option<String> {
    (county.len() == 5 && county.chars().all(|c| c.is_ascii_digit())).then(|| county[..2].to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaveOutOptions {
    pub min_out_of_state: usize,
    pub coverage_floor: f64,
    pub demean: DemeanOptions,
}

impl Default for LeaveOutOptions {
    fn default() -> Self {
        Self { min_out_of_state: 50, coverage_floor: 0.70, demean: DemeanOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LenderPricePosition {
    /// (lender, state) -> λ normalized to loan-weighted mean zero within state.
    pub effects: BTreeMap<(String, String), f64>,
    /// (lender, state) -> shock-period loan count.
    pub counts: BTreeMap<(String, String), usize>,
    /// (lender, left-out state) -> q, present only above the loan threshold.
    pub leave_out: BTreeMap<(String, String), f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeaveOutResult {
    /// County -> predicted payment deviation.
    pub predictions: BTreeMap<String, f64>,
    /// Counties dropped for insufficient lender coverage, with the coverage.
    pub omitted: Vec<(String, f64)>,
    pub positions: LenderPricePosition,
    /// Slopes on the shock-period controls.
    pub slopes: Vec<f64>,
}

/// Lender-predicted county payments.
///
/// `state_of` maps a county code to its state; every loan's county must
/// resolve.
pub fn lender_leaveout_payments(
    loans_pre: &LoanSet,
    loans_shock: &LoanSet,
    state_of: impl Fn(&str) -> Option<String>,
    opts: LeaveOutOptions,
) -> Result<LeaveOutResult> {
    if !(0.0..=1.0).contains(&opts.coverage_floor) {
        return invalid("coverage floor must lie in [0, 1]");
    }
    let state = |county: &str| {
        state_of(county).ok_or_else(|| CoreError::InvalidInput(format!("no state for county {county}")))
    };

    // (1) pre-period county lender shares
    let mut pre_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for l in loans_pre.loans() {
        state(&l.county)?;
        *pre_counts.entry(l.county.clone()).or_default().entry(l.lender.clone()).or_default() += 1;
    }

    // (2) pooled regression with county, state-year and lender-by-state effects
    let shock = loans_shock.loans();
    if shock.is_empty() {
        return Err(CoreError::InsufficientData("no shock-period loans".into()));
    }
    let states: Vec<String> = shock.iter().map(|l| state(&l.county)).collect::<Result<_>>()?;
    let y: Vec<f64> = shock.iter().map(|l| normalized_payment(l.annual_rate)).collect::<Result<_>>()?;
    let county_key: Vec<String> = shock.iter().map(|l| l.county.clone()).collect();
    let state_year: Vec<String> = shock.iter().zip(&states).map(|(l, s)| format!("{s}|{}", l.vintage_year)).collect();
    let lender_state: Vec<String> = shock.iter().zip(&states).map(|(l, s)| format!("{}|{s}", l.lender)).collect();
    let ls_ids = dense_ids(lender_state.iter().map(String::as_str));
    let ids = vec![
        dense_ids(county_key.iter().map(String::as_str)),
        dense_ids(state_year.iter().map(String::as_str)),
        ls_ids.clone(),
    ];
    let absorber = Absorber::from_ids(ids, vec![1.0; shock.len()], opts.demean)?;

    let k = loans_shock.covariate_names().len();
    let raw: Vec<Vec<f64>> = (0..k).map(|j| shock.iter().map(|l| l.covariates[j]).collect()).collect();
    let slopes = if k > 0 {
        let y_dm = absorber.demean(&y)?.values;
        let x_dm: Vec<Vec<f64>> = raw.iter().map(|c| Ok(absorber.demean(c)?.values)).collect::<Result<_>>()?;
        let norms: Vec<f64> = raw.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let fit = least_squares(&x_dm, &y_dm, loans_shock.covariate_names(), &norms)?;
        fit.coef.iter().copied().collect()
    } else {
        Vec::new()
    };
    let resid: Vec<f64> = (0..shock.len())
        .map(|i| y[i] - raw.iter().zip(&slopes).map(|(c, b)| c[i] * b).sum::<f64>())
        .collect();
    let fx = absorber.effects(&resid)?;
    let lambda_by_id = &fx[2];

    // (3) normalize within state to loan-weighted mean zero
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut raw_effect: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (i, l) in shock.iter().enumerate() {
        let key = (l.lender.clone(), states[i].clone());
        *counts.entry(key.clone()).or_default() += 1;
        raw_effect.insert(key, lambda_by_id[ls_ids[i]]);
    }
    let mut state_mean: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (key, n) in &counts {
        let e = state_mean.entry(key.1.as_str()).or_default();
        e.0 += *n as f64 * raw_effect[key];
        e.1 += *n as f64;
    }
    let effects: BTreeMap<(String, String), f64> = raw_effect
        .iter()
        .map(|(key, v)| {
            let (s, w) = state_mean[key.1.as_str()];
            (key.clone(), v - s / w)
        })
        .collect();

    // (4) leave-state-out averages
    let mut by_lender: BTreeMap<&str, Vec<(&str, usize, f64)>> = BTreeMap::new();
    for ((lender, s), n) in &counts {
        by_lender.entry(lender.as_str()).or_default().push((s.as_str(), *n, effects[&(lender.clone(), s.clone())]));
    }
    let target_states: BTreeSet<String> = pre_counts.keys().map(|c| state(c)).collect::<Result<_>>()?;
    let mut leave_out = BTreeMap::new();
    for (lender, cells) in &by_lender {
        let total_n: usize = cells.iter().map(|c| c.1).sum();
        let total_w: f64 = cells.iter().map(|c| c.1 as f64 * c.2).sum();
        for k_state in &target_states {
            let (own_n, own_w) = cells
                .iter()
                .find(|c| c.0 == k_state)
                .map_or((0, 0.0), |c| (c.1, c.1 as f64 * c.2));
            let n_out = total_n - own_n;
            if n_out >= opts.min_out_of_state && n_out > 0 {
                leave_out.insert((lender.to_string(), k_state.clone()), (total_w - own_w) / n_out as f64);
            }
        }
    }

    // (5) county predictions with the coverage rule
    let mut predictions = BTreeMap::new();
    let mut omitted = Vec::new();
    for (county, lenders) in &pre_counts {
        let s = state(county)?;
        let total: usize = lenders.values().sum();
        let mut covered = 0.0;
        let mut value = 0.0;
        for (lender, n) in lenders {
            if let Some(q) = leave_out.get(&(lender.clone(), s.clone())) {
                let share = *n as f64 / total as f64;
                covered += share;
                value += share * q;
            }
        }
        if covered >= opts.coverage_floor && covered > 0.0 {
            predictions.insert(county.clone(), value);
        } else {
            omitted.push((county.clone(), covered));
        }
    }

    Ok(LeaveOutResult {
        predictions,
        omitted,
        positions: LenderPricePosition { effects, counts, leave_out },
        slopes,
    })
}

/// County predictions averaged to commuting zones with pre-period loan-count
/// weights, over counties that kept a prediction.
pub fn aggregate_to_cz(
    county_values: &BTreeMap<String, f64>,
    loans_pre: &LoanSet,
    cz_map: &BTreeMap<String, String>,
) -> BTreeMap<String, f64> {
    let mut n_by_county: BTreeMap<&str, usize> = BTreeMap::new();
    for l in loans_pre.loans() {
        *n_by_county.entry(l.county.as_str()).or_default() += 1;
    }
    let mut acc: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (county, n) in n_by_county {
        let (Some(v), Some(cz)) = (county_values.get(county), cz_map.get(county)) else {
            continue;
        };
        let e = acc.entry(cz.clone()).or_default();
        e.0 += n as f64 * v;
        e.1 += n as f64;
    }
    acc.into_iter().map(|(cz, (s, w))| (cz, s / w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fips_prefix() {
        assert_eq!(fips_state("06037").as_deref(), Some("06"));
        assert_eq!(fips_state("6037"), None);
        assert_eq!(fips_state("0603x"), None);
    }
}
