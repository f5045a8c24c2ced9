//! Destination exposure: weighted-origin payments, the wedge, its variance
//! decomposition, and network-permutation placebo helpers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, CoreError, Result};
use crate::network::WeightMatrix;

/// What to do when a weighted origin has no payment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingOriginPolicy {
    /// Drop such origins and renormalize the remaining weights.
    #[default]
    DropAndRenormalize,
    /// Treat the whole destination as missing.
    MarkMissing,
}

impl std::str::FromStr for MissingOriginPolicy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" | "drop_and_renormalize" => Ok(Self::DropAndRenormalize),
            "missing" | "mark_missing" => Ok(Self::MarkMissing),
            _ => invalid(format!("unknown missing-origin policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WopResult {
    pub values: BTreeMap<String, f64>,
    /// Destinations where at least one weighted origin lacked a payment.
    pub incomplete: Vec<String>,
    /// Destinations left without a value.
    pub missing: Vec<String>,
}

/// WOP_d = Σ_{o≠d} ω_od·P_o.
pub fn build_wop(weights: &WeightMatrix, payments: &BTreeMap<String, f64>, policy: MissingOriginPolicy) -> WopResult {
    let mut out = WopResult::default();
    for (d, origins) in weights.iter() {
        let mut sum = 0.0;
        let mut covered = 0.0;
        let mut complete = true;
        for (o, w) in origins {
            if o == d {
                continue;
            }
            match payments.get(o) {
                Some(p) => {
                    sum += w * p;
                    covered += w;
                }
                None => complete = false,
            }
        }
        if !complete {
            out.incomplete.push(d.to_string());
        }
        let value = match policy {
            _ if covered <= 0.0 => None,
            MissingOriginPolicy::MarkMissing if !complete => None,
            MissingOriginPolicy::MarkMissing => Some(sum),
            MissingOriginPolicy::DropAndRenormalize if complete => Some(sum),
            MissingOriginPolicy::DropAndRenormalize => Some(sum / covered),
        };
        match value {
            Some(v) => {
                out.values.insert(d.to_string(), v);
            }
            None => out.missing.push(d.to_string()),
        }
    }
    out
}

/// The instrument: predicted payments aggregated through predicted shares.
pub fn build_predicted_wop(
    gravity_shares: &WeightMatrix,
    predicted_payments: &BTreeMap<String, f64>,
    policy: MissingOriginPolicy,
) -> WopResult {
    build_wop(gravity_shares, predicted_payments, policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureRow {
    pub cz: String,
    pub p_new: Option<f64>,
    pub wop: Option<f64>,
    pub mpw: Option<f64>,
    pub predicted_wop: Option<f64>,
}

impl ExposureRow {
    pub fn new(cz: impl Into<String>, p_new: Option<f64>, wop: Option<f64>) -> Self {
        let mpw = match (p_new, wop) {
            (Some(p), Some(w)) => Some(p - w),
            _ => None,
        };
        Self { cz: cz.into(), p_new, wop, mpw, predicted_wop: None }
    }
}

/// One row per commuting zone, ordered by code.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExposureTable {
    rows: Vec<ExposureRow>,
}

impl ExposureTable {
    /// Accepts externally built rows, checking mpw = p_new − wop.
    pub fn from_rows(mut rows: Vec<ExposureRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.cz.cmp(&b.cz));
        if let Some(w) = rows.windows(2).find(|w| w[0].cz == w[1].cz) {
            return invalid(format!("duplicate exposure row for {}", w[0].cz));
        }
        for r in &rows {
            match (r.p_new, r.wop, r.mpw) {
                (Some(p), Some(w), Some(m)) => {
                    let scale = p.abs().max(w.abs()).max(1.0);
                    if (m - (p - w)).abs() > 1e-9 * scale {
                        return invalid(format!("{}: mpw {m} differs from p_new - wop = {}", r.cz, p - w));
                    }
                }
                (Some(_), Some(_), None) => {
                    return invalid(format!("{}: mpw missing although both components are present", r.cz))
                }
                (_, _, Some(_)) => {
                    return invalid(format!("{}: mpw present although a component is missing", r.cz))
                }
                _ => {}
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ExposureRow] {
        &self.rows
    }

    pub fn get(&self, cz: &str) -> Option<&ExposureRow> {
        self.rows.binary_search_by(|r| r.cz.as_str().cmp(cz)).ok().map(|i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Attaches the instrument column; zones absent from `z` get `None`.
    pub fn with_instrument(mut self, z: &BTreeMap<String, f64>) -> Self {
        for r in &mut self.rows {
            r.predicted_wop = z.get(&r.cz).copied();
        }
        self
    }

    /// (cz, value) pairs for rows where `f` yields a value.
    pub fn column(&self, f: impl Fn(&ExposureRow) -> Option<f64>) -> BTreeMap<String, f64> {
        self.rows.iter().filter_map(|r| f(r).map(|v| (r.cz.clone(), v))).collect()
    }
}

/// mpw = p_new − wop over the union of both inputs.
pub fn build_mpw(p_new: &BTreeMap<String, f64>, wop: &BTreeMap<String, f64>) -> ExposureTable {
    let mut keys: Vec<&String> = p_new.keys().chain(wop.keys()).collect();
    keys.sort();
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|cz| ExposureRow::new(cz.clone(), p_new.get(cz).copied(), wop.get(cz).copied()))
        .collect();
    ExposureTable { rows }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    pub var_mpw: f64,
    pub var_pnew: f64,
    pub var_wop: f64,
    /// −2·Cov(P^new, WOP)
    pub cov_term: f64,
    pub corr: f64,
    pub n: usize,
}

impl VarianceDecomposition {
    /// Assembles the decomposition from published moments.
    pub fn from_moments(var_pnew: f64, var_wop: f64, cov: f64) -> Self {
        Self {
            var_mpw: var_pnew + var_wop - 2.0 * cov,
            var_pnew,
            var_wop,
            cov_term: -2.0 * cov,
            corr: cov / (var_pnew.sqrt() * var_wop.sqrt()),
            n: 0,
        }
    }
}

/// Sample (n−1) moments over rows with a wedge. var_mpw is computed
/// directly from the wedge column.
pub fn variance_decomposition(table: &ExposureTable) -> Result<VarianceDecomposition> {
    let rows: Vec<(f64, f64, f64)> = table
        .rows
        .iter()
        .filter_map(|r| Some((r.p_new?, r.wop?, r.mpw?)))
        .collect();
    let n = rows.len();
    if n < 2 {
        return Err(CoreError::InsufficientData(format!("{n} rows with a wedge; need at least 2")));
    }
    let nf = n as f64;
    let (mp, mw, mm) = rows
        .iter()
        .fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0 / nf, a.1 + r.1 / nf, a.2 + r.2 / nf));
    let (mut vp, mut vw, mut vm, mut c) = (0.0, 0.0, 0.0, 0.0);
    for (p, w, m) in &rows {
        let (dp, dw, dm) = (p - mp, w - mw, m - mm);
        vp += dp * dp;
        vw += dw * dw;
        vm += dm * dm;
        c += dp * dw;
    }
    let df = nf - 1.0;
    let (vp, vw, vm, c) = (vp / df, vw / df, vm / df, c / df);
    Ok(VarianceDecomposition {
        var_mpw: vm,
        var_pnew: vp,
        var_wop: vw,
        cov_term: -2.0 * c,
        corr: c / (vp.sqrt() * vw.sqrt()),
        n,
    })
}

/// Shuffles wop across rows that have a wedge, keeping p_new fixed and
/// recomputing mpw. Deterministic in `seed`.
pub fn permute_wop(table: &ExposureTable, seed: u64) -> ExposureTable {
    let idx: Vec<usize> = (0..table.rows.len()).filter(|&i| table.rows[i].mpw.is_some()).collect();
    let mut values: Vec<Option<f64>> = idx.iter().map(|&i| table.rows[i].wop).collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rows = table.rows.clone();
    for (&i, w) in idx.iter().zip(values) {
        let r = &mut rows[i];
        *r = ExposureRow { predicted_wop: r.predicted_wop, ..ExposureRow::new(r.cz.clone(), r.p_new, w) };
    }
    ExposureTable { rows }
}

/// Seed for replication `r` under `master`: the SplitMix64 output at
/// position r+1 of the stream started at `master`. Replications are thus
/// independent of execution order.
pub fn replication_seed(master: u64, r: u64) -> u64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = master.wrapping_add(GAMMA.wrapping_mul(r.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-sided centered permutation p-value with the add-one convention:
/// (1 + #{|placebo − m| ≥ |actual − m|}) / (R + 1), m the placebo mean.
pub fn centered_p_value(actual: f64, placebos: &[f64]) -> Result<f64> {
    if placebos.is_empty() {
        return invalid("centered p-value needs at least one placebo draw");
    }
    let r = placebos.len() as f64;
    let m = placebos.iter().sum::<f64>() / r;
    let a = (actual - m).abs();
    let hits = placebos.iter().filter(|p| (*p - m).abs() >= a).count();
    Ok((1 + hits) as f64 / (r + 1.0))
}

/// Foreign-worker response per deterred domestic mover:
/// O = ē·θ / |β|.
pub fn offset_ratio(beta_migration: f64, theta_h1b: f64, e_bar: f64) -> Result<f64> {
    if beta_migration == 0.0 || !beta_migration.is_finite() {
        return invalid("offset ratio needs a nonzero migration effect");
    }
    Ok(e_bar * theta_h1b / beta_migration.abs())
}

pub const DEFAULT_E_BAR: f64 = 0.45;
