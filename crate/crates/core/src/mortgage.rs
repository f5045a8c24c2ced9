//! Fixed-rate amortization, the ridge pricing model with absorbed county
//! effects, and commuting-zone payment aggregates.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use lockin_panel::linalg::collinear_columns;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, CoreError, Result};

/// Principal used to normalize payments, in dollars.
pub const NORMALIZED_PRINCIPAL: f64 = 100_000.0;
/// Loan term used to normalize payments, in months.
pub const NORMALIZED_TERM: u32 = 360;

/// Level payment that retires `principal` over `term_months` at a fixed
/// annual rate compounded monthly.
pub fn monthly_payment(principal: f64, annual_rate: f64, term_months: u32) -> Result<f64> {
    if !(principal > 0.0) || !principal.is_finite() {
        return invalid(format!("principal must be positive, got {principal}"));
    }
    if term_months == 0 {
        return invalid("term must be at least one month");
    }
    if !(annual_rate >= 0.0) || !annual_rate.is_finite() {
        return invalid(format!("annual rate must be nonnegative, got {annual_rate}"));
    }
    let n = f64::from(term_months);
    if annual_rate == 0.0 {
        return Ok(principal / n);
    }
    let i = annual_rate / 12.0;
    // (1+i)^n and (1+i)^n - 1 without cancellation at tiny rates
    let log_growth = n * i.ln_1p();
    let growth = log_growth.exp();
    Ok(principal * i * growth / log_growth.exp_m1())
}

/// Payment per $100,000 over 30 years.
pub fn normalized_payment(annual_rate: f64) -> Result<f64> {
    monthly_payment(NORMALIZED_PRINCIPAL, annual_rate, NORMALIZED_TERM)
}

/// Present value of a constant monthly amount paid for `years`, discounted
/// monthly at `annual_discount`/12.
pub fn present_value_of_wedge(monthly_amount: f64, annual_discount: f64, years: f64) -> Result<f64> {
    if !(annual_discount > 0.0) || !annual_discount.is_finite() {
        return invalid(format!("discount rate must be positive, got {annual_discount}"));
    }
    if !(years >= 0.0) || !years.is_finite() {
        return invalid(format!("horizon must be nonnegative, got {years}"));
    }
    let r = annual_discount / 12.0;
    let annuity = -(-12.0 * years * r.ln_1p()).exp_m1() / r;
    Ok(monthly_amount * annuity)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoanRecord {
    pub loan_id: String,
    pub county: String,
    pub lender: String,
    pub vintage_year: i32,
    pub annual_rate: f64,
    pub principal: f64,
    pub covariates: Vec<f64>,
}

/// Loans sharing one covariate schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoanSet {
    covariate_names: Vec<String>,
    loans: Vec<LoanRecord>,
}

impl LoanSet {
    pub fn new(covariate_names: Vec<String>, loans: Vec<LoanRecord>) -> Result<Self> {
        let k = covariate_names.len();
        for l in &loans {
            if !(l.annual_rate >= 0.0) || !l.annual_rate.is_finite() {
                return invalid(format!("loan {}: annual_rate must be nonnegative", l.loan_id));
            }
            if !(l.principal > 0.0) || !l.principal.is_finite() {
                return invalid(format!("loan {}: principal must be positive", l.loan_id));
            }
            if l.covariates.len() != k {
                return invalid(format!(
                    "loan {}: {} covariates, schema declares {k}",
                    l.loan_id,
                    l.covariates.len()
                ));
            }
            if l.covariates.iter().any(|v| !v.is_finite()) {
                return invalid(format!("loan {}: covariates must be finite", l.loan_id));
            }
        }
        Ok(Self { covariate_names, loans })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn loans(&self) -> &[LoanRecord] {
        &self.loans
    }

    pub fn len(&self) -> usize {
        self.loans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loans.is_empty()
    }

    /// Loans whose vintage falls in `years`.
    pub fn vintages(&self, years: RangeInclusive<i32>) -> Self {
        Self {
            covariate_names: self.covariate_names.clone(),
            loans: self.loans.iter().filter(|l| years.contains(&l.vintage_year)).cloned().collect(),
        }
    }

    /// Errors if any loan falls outside `years`.
    pub fn check_vintages(&self, years: RangeInclusive<i32>) -> Result<()> {
        match self.loans.iter().find(|l| !years.contains(&l.vintage_year)) {
            Some(l) => invalid(format!(
                "loan {}: vintage {} outside {}..={}",
                l.loan_id,
                l.vintage_year,
                years.start(),
                years.end()
            )),
            None => Ok(()),
        }
    }
}

/// Linear rate model with county intercepts.
///
/// Predicted rate = intercept + county_effect + x'slopes, floored at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingModel {
    pub covariate_names: Vec<String>,
    /// Slopes on the original covariate scale.
    pub slopes: Vec<f64>,
    pub county_effects: BTreeMap<String, f64>,
    pub intercept: f64,
    pub penalty: f64,
    /// Full-sample covariate means.
    pub means: Vec<f64>,
    /// Standard deviation of each within-county demeaned covariate.
    pub scales: Vec<f64>,
}

impl PricingModel {
    /// Slopes on the standardized scale, the ones the penalty acts on.
    pub fn standardized_slopes(&self) -> Vec<f64> {
        self.slopes.iter().zip(&self.scales).map(|(b, s)| b * s).collect()
    }

    /// Unfloored linear index, or `None` for a county the model never saw.
    pub fn linear_index(&self, county: &str, covariates: &[f64]) -> Option<f64> {
        let effect = self.county_effects.get(county)?;
        let xb: f64 = covariates.iter().zip(&self.slopes).map(|(x, b)| x * b).sum();
        Some(self.intercept + effect + xb)
    }

    pub fn predict_rate(&self, county: &str, covariates: &[f64]) -> Option<f64> {
        self.linear_index(county, covariates).map(|r| r.max(0.0))
    }
}

/// Ridge regression of contract rates on covariates with unpenalized county
/// effects absorbed by within-county demeaning.
///
/// Covariates are demeaned within county and divided by the standard
/// deviation of the demeaned column before the penalty is applied; the
/// returned slopes are mapped back to the original scale. `penalty = 0`
/// is ordinary least squares with county dummies.
pub fn fit_pricing_model(loans: &LoanSet, penalty: f64) -> Result<PricingModel> {
    if !(penalty >= 0.0) || !penalty.is_finite() {
        return invalid(format!("penalty must be nonnegative, got {penalty}"));
    }
    let data = loans.loans();
    let k = loans.covariate_names().len();
    let n = data.len();

    let mut by_county: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in data.iter().enumerate() {
        by_county.entry(l.county.as_str()).or_default().push(i);
    }
    let thin: Vec<&str> = by_county.iter().filter(|(_, v)| v.len() < 2).map(|(c, _)| *c).collect();
    if !thin.is_empty() {
        return invalid(format!("counties with fewer than 2 loans: {}", thin.join(", ")));
    }
    if n <= by_county.len() + k {
        return Err(CoreError::InsufficientData(format!(
            "{n} loans for {} counties and {k} covariates",
            by_county.len()
        )));
    }

    let y: Vec<f64> = data.iter().map(|l| l.annual_rate).collect();
    let col = |j: usize| -> Vec<f64> { data.iter().map(|l| l.covariates[j]).collect() };
    let raw: Vec<Vec<f64>> = (0..k).map(col).collect();

    let county_mean = |v: &[f64]| -> BTreeMap<&str, f64> {
        by_county
            .iter()
            .map(|(c, rows)| (*c, rows.iter().map(|&i| v[i]).sum::<f64>() / rows.len() as f64))
            .collect()
    };
    let within = |v: &[f64], means: &BTreeMap<&str, f64>| -> Vec<f64> {
        data.iter().zip(v).map(|(l, x)| x - means[l.county.as_str()]).collect()
    };

    let y_means = county_mean(&y);
    let y_dm = within(&y, &y_means);
    let x_means: Vec<BTreeMap<&str, f64>> = raw.iter().map(|c| county_mean(c)).collect();
    let x_dm: Vec<Vec<f64>> = raw.iter().zip(&x_means).map(|(c, m)| within(c, m)).collect();

    let names = loans.covariate_names();
    let scales: Vec<f64> = x_dm
        .iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt())
        .collect();
    let raw_norms: Vec<f64> = raw.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let absorbed: Vec<String> = scales
        .iter()
        .zip(&raw_norms)
        .zip(names)
        .filter(|((s, r), _)| !(**s > 1e-12 * r.max(1.0)))
        .map(|(_, name)| name.clone())
        .collect();
    if !absorbed.is_empty() {
        return Err(CoreError::RankDeficient(absorbed));
    }
    let z: Vec<Vec<f64>> = x_dm.iter().zip(&scales).map(|(c, s)| c.iter().map(|v| v / s).collect()).collect();
    if penalty == 0.0 {
        let bad = collinear_columns(&z, names, &[]);
        if !bad.is_empty() {
            return Err(CoreError::RankDeficient(bad));
        }
    }

    let zm = DMatrix::from_fn(n, k, |i, j| z[j][i]);
    let gram = zm.transpose() * &zm + DMatrix::identity(k, k) * penalty;
    let rhs = zm.transpose() * DVector::from_column_slice(&y_dm);
    let b = match gram.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None if k == 0 => DVector::zeros(0),
        None => return Err(CoreError::RankDeficient(names.to_vec())),
    };
    let slopes: Vec<f64> = b.iter().zip(&scales).map(|(b, s)| b / s).collect();

    let means: Vec<f64> = raw.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let y_bar = y.iter().sum::<f64>() / n as f64;
    let intercept = y_bar - dot(&means, &slopes);
    let county_effects = by_county
        .keys()
        .map(|c| {
            let xb: f64 = x_means.iter().zip(&slopes).map(|(m, s)| m[c] * s).sum();
            (c.to_string(), y_means[c] - xb - intercept)
        })
        .collect();

    Ok(PricingModel {
        covariate_names: names.to_vec(),
        slopes,
        county_effects,
        intercept,
        penalty,
        means,
        scales,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean normalized payment for one commuting zone; `None` when no loan
/// contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentAggregate {
    pub cz: String,
    pub payment: Option<f64>,
    pub n_loans: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PaymentDiagnostics {
    /// Loans whose county has no commuting zone.
    pub unmapped: Vec<String>,
    /// Loans whose county has no pricing effect.
    pub unpriced: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSummary {
    pub aggregates: Vec<PaymentAggregate>,
    pub diagnostics: PaymentDiagnostics,
}

impl PaymentSummary {
    /// Non-missing payments keyed by commuting zone.
    pub fn payments(&self) -> BTreeMap<String, f64> {
        self.aggregates
            .iter()
            .filter_map(|a| a.payment.map(|p| (a.cz.clone(), p)))
            .collect()
    }

    pub fn get(&self, cz: &str) -> Option<&PaymentAggregate> {
        self.aggregates.iter().find(|a| a.cz == cz)
    }
}

/// Counterfactual payment: each loan re-priced by `model`, normalized, and
/// averaged within commuting zone (loan-count weights).
pub fn compute_p_new(
    model: &PricingModel,
    loans: &LoanSet,
    cz_map: &BTreeMap<String, String>,
) -> Result<PaymentSummary> {
    if loans.covariate_names() != model.covariate_names.as_slice() {
        return invalid("loan covariate schema does not match the pricing model");
    }
    aggregate(loans, cz_map, |l| model.predict_rate(&l.county, &l.covariates))
}

/// Payment at each loan's own contract rate, normalized and averaged within
/// commuting zone.
pub fn compute_p_old(loans: &LoanSet, cz_map: &BTreeMap<String, String>) -> Result<PaymentSummary> {
    aggregate(loans, cz_map, |l| Some(l.annual_rate))
}

fn aggregate(
    loans: &LoanSet,
    cz_map: &BTreeMap<String, String>,
    rate: impl Fn(&LoanRecord) -> Option<f64>,
) -> Result<PaymentSummary> {
    let mut per_cz: BTreeMap<&str, Vec<(&str, f64)>> = cz_map.values().map(|c| (c.as_str(), Vec::new())).collect();
    let mut diagnostics = PaymentDiagnostics::default();
    for l in loans.loans() {
        let Some(cz) = cz_map.get(&l.county) else {
            diagnostics.unmapped.push(l.loan_id.clone());
            continue;
        };
        let Some(r) = rate(l) else {
            diagnostics.unpriced.push(l.loan_id.clone());
            continue;
        };
        per_cz.entry(cz.as_str()).or_default().push((l.loan_id.as_str(), normalized_payment(r)?));
    }
    let aggregates = per_cz
        .into_iter()
        .map(|(cz, mut v)| {
            v.sort_by(|a, b| a.0.cmp(b.0));
            let n = v.len();
            let payment = (n > 0).then(|| v.iter().map(|(_, p)| p).sum::<f64>() / n as f64);
            PaymentAggregate { cz: cz.to_string(), payment, n_loans: n }
        })
        .collect();
    Ok(PaymentSummary { aggregates, diagnostics })
}
