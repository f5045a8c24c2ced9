//! Occupation-group Bartik demand shocks and positive-tercile bins.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BartikCell {
    pub cz: String,
    pub soc: String,
    pub year: i32,
    /// Percentage points, demeaned over the full panel.
    pub b: f64,
}

/// b_cst = 100·share_cs·(log emp_st − mean_{baseline} log emp_s), then
/// demeaned over every (cz, soc, year) cell produced.
///
/// One cell is produced for each baseline share and each year with national
/// employment for that group.
pub fn build_bartik(
    baseline_shares: &BTreeMap<(String, String), f64>,
    national_emp: &BTreeMap<(String, i32), f64>,
    baseline_years: &[i32],
) -> Result<Vec<BartikCell>> {
    if baseline_years.is_empty() {
        return invalid("at least one baseline year is required");
    }
    if let Some(((soc, year), v)) = national_emp.iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return invalid(format!("national employment for {soc} in {year} must be positive, got {v}"));
    }
    let mut by_soc: BTreeMap<&str, Vec<(i32, f64)>> = BTreeMap::new();
    for ((soc, year), emp) in national_emp {
        by_soc.entry(soc.as_str()).or_default().push((*year, emp.ln()));
    }
    let mut growth: BTreeMap<&str, Vec<(i32, f64)>> = BTreeMap::new();
    for (soc, series) in &by_soc {
        let base: Vec<f64> = baseline_years
            .iter()
            .map(|y| {
                series.iter().find(|(t, _)| t == y).map(|(_, v)| *v).ok_or_else(|| {
                    crate::error::CoreError::InvalidInput(format!("no national employment for {soc} in baseline year {y}"))
                })
            })
            .collect::<Result<_>>()?;
        let mean = base.iter().sum::<f64>() / base.len() as f64;
        growth.insert(soc, series.iter().map(|(t, v)| (*t, v - mean)).collect());
    }

    let mut cells = Vec::new();
    for ((cz, soc), share) in baseline_shares {
        if !(*share >= 0.0) || !share.is_finite() {
            return invalid(format!("baseline share for ({cz}, {soc}) must be nonnegative"));
        }
        let Some(series) = growth.get(soc.as_str()) else {
            return invalid(format!("no national employment series for {soc}"));
        };
        for (year, g) in series {
            cells.push(BartikCell { cz: cz.clone(), soc: soc.clone(), year: *year, b: 100.0 * share * g });
        }
    }
    if !cells.is_empty() {
        let mean = cells.iter().map(|c| c.b).sum::<f64>() / cells.len() as f64;
        cells.iter_mut().for_each(|c| c.b -= mean);
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BartikBin {
    NonPositive,
    Low,
    Mid,
    High,
}

impl BartikBin {
    pub fn label(self) -> &'static str {
        match self {
            Self::NonPositive => "nonpositive",
            Self::Low => "low",
            Self::Mid => "mid",
            Self::High => "high",
        }
    }
}

/// Linear-interpolation percentile of sorted data at q ∈ [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonpositive shocks form the reference bin; positive shocks are split at
/// the 1/3 and 2/3 percentiles of the positive values, a value equal to a
/// cut going to the lower bin.
pub fn bin_positive_terciles(shocks: &[f64]) -> Vec<BartikBin> {
    let mut pos: Vec<f64> = shocks.iter().copied().filter(|v| *v > 0.0).collect();
    if pos.is_empty() {
        return vec![BartikBin::NonPositive; shocks.len()];
    }
    pos.sort_by(f64::total_cmp);
    let c1 = percentile(&pos, 1.0 / 3.0);
    let c2 = percentile(&pos, 2.0 / 3.0);
    shocks
        .iter()
        .map(|&v| match v {
            v if !(v > 0.0) => BartikBin::NonPositive,
            v if v <= c1 => BartikBin::Low,
            v if v <= c2 => BartikBin::Mid,
            _ => BartikBin::High,
        })
        .collect()
}
