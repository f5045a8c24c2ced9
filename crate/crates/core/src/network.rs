//! Bilateral migration flows: crosswalks, in-share weights, truncation,
//! geography and the log-linear gravity model.

use std::collections::{BTreeMap, BTreeSet};

use lockin_panel::linalg::least_squares;

use crate::error::{invalid, CoreError, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Origin -> destination counts, at most one row per pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowTable {
    flows: BTreeMap<(String, String), f64>,
}

impl FlowTable {
    pub fn new(rows: impl IntoIterator<Item = (String, String, f64)>) -> Result<Self> {
        let mut flows = BTreeMap::new();
        for (o, d, c) in rows {
            if !(c >= 0.0) || !c.is_finite() {
                return invalid(format!("flow {o}->{d}: count must be nonnegative, got {c}"));
            }
            if flows.insert((o.clone(), d.clone()), c).is_some() {
                return invalid(format!("duplicate flow row {o}->{d}"));
            }
        }
        Ok(Self { flows })
    }

    pub fn get(&self, origin: &str, destination: &str) -> f64 {
        self.flows.get(&(origin.to_string(), destination.to_string())).copied().unwrap_or(0.0)
    }

    /// Rows in (origin, destination) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.flows.iter().map(|((o, d), c)| (o.as_str(), d.as_str(), *c))
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.flows.values().sum()
    }
}

/// County -> [(CZ, weight)] allocation; weights per county sum to one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Crosswalk {
    parts: BTreeMap<String, Vec<(String, f64)>>,
}

impl Crosswalk {
    pub fn new(rows: impl IntoIterator<Item = (String, String, f64)>) -> Result<Self> {
        let mut parts: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (county, cz, w) in rows {
            if !(w >= 0.0) || !w.is_finite() {
                return invalid(format!("crosswalk {county}->{cz}: weight must be nonnegative"));
            }
            let entry = parts.entry(county.clone()).or_default();
            if entry.iter().any(|(c, _)| *c == cz) {
                return invalid(format!("duplicate crosswalk row {county}->{cz}"));
            }
            entry.push((cz, w));
        }
        for (county, v) in &parts {
            let s: f64 = v.iter().map(|(_, w)| w).sum();
            if (s - 1.0).abs() > 1e-6 {
                return invalid(format!("crosswalk weights for county {county} sum to {s}, not 1"));
            }
        }
        Ok(Self { parts })
    }

    /// Each county mapped wholly to one CZ.
    pub fn identity_like(map: &BTreeMap<String, String>) -> Self {
        Self { parts: map.iter().map(|(k, v)| (k.clone(), vec![(v.clone(), 1.0)])).collect() }
    }

    pub fn parts(&self, county: &str) -> Option<&[(String, f64)]> {
        self.parts.get(county).map(Vec::as_slice)
    }

    pub fn counties(&self) -> impl Iterator<Item = &str> {
        self.parts.keys().map(String::as_str)
    }

    /// County -> the CZ carrying its largest weight (ties to the smaller code).
    pub fn dominant(&self) -> BTreeMap<String, String> {
        self.parts
            .iter()
            .filter_map(|(county, v)| {
                v.iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                    .map(|(cz, _)| (county.clone(), cz.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosswalkResult {
    pub flows: FlowTable,
    /// Counties absent from the crosswalk; their rows were dropped.
    pub missing_counties: Vec<String>,
    pub dropped_mass: f64,
}

/// Allocates county-to-county flows to CZ pairs by the product of the two
/// counties' crosswalk weights.
pub fn apply_crosswalk(flows: &FlowTable, crosswalk: &Crosswalk) -> CrosswalkResult {
    let mut out: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut missing = BTreeSet::new();
    let mut dropped_mass = 0.0;
    for (o, d, c) in flows.iter() {
        let (po, pd) = (crosswalk.parts(o), crosswalk.parts(d));
        if po.is_none() {
            missing.insert(o.to_string());
        }
        if pd.is_none() {
            missing.insert(d.to_string());
        }
        let (Some(po), Some(pd)) = (po, pd) else {
            dropped_mass += c;
            continue;
        };
        for (co, wo) in po {
            for (cd, wd) in pd {
                *out.entry((co.clone(), cd.clone())).or_default() += c * wo * wd;
            }
        }
    }
    CrosswalkResult {
        flows: FlowTable { flows: out },
        missing_counties: missing.into_iter().collect(),
        dropped_mass,
    }
}

/// Destination -> [(origin, share)], origins in code order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightMatrix {
    rows: BTreeMap<String, Vec<(String, f64)>>,
}

impl WeightMatrix {
    /// Builds from raw nonnegative masses, dropping self-pairs and zero
    /// entries and normalizing each destination to sum one.
    pub fn from_masses(rows: BTreeMap<String, Vec<(String, f64)>>) -> Self {
        let mut out = BTreeMap::new();
        for (d, mut origins) in rows {
            origins.retain(|(o, m)| *o != d && *m > 0.0);
            let total: f64 = origins.iter().map(|(_, m)| m).sum();
            if !(total > 0.0) || !total.is_finite() {
                continue;
            }
            origins.iter_mut().for_each(|(_, m)| *m /= total);
            origins.sort_by(|a, b| a.0.cmp(&b.0));
            out.insert(d, origins);
        }
        Self { rows: out }
    }

    pub fn shares(&self, destination: &str) -> Option<&[(String, f64)]> {
        self.rows.get(destination).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.rows.iter().map(|(d, v)| (d.as_str(), v.as_slice()))
    }

    pub fn destinations(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest number of origins feeding any destination.
    pub fn max_origins(&self) -> usize {
        self.rows.values().map(Vec::len).max().unwrap_or(0)
    }
}

/// ω_od = flow_od / Σ_{o'≠d} flow_o'd. Destinations without inflow from
/// other places are omitted.
pub fn normalize_in_shares(flows: &FlowTable) -> WeightMatrix {
    let mut rows: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (o, d, c) in flows.iter() {
        rows.entry(d.to_string()).or_default().push((o.to_string(), c));
    }
    WeightMatrix::from_masses(rows)
}

/// Keeps the `k` largest origins per destination (ties to the smaller
/// origin code) and renormalizes.
pub fn truncate_top_k(weights: &WeightMatrix, k: usize) -> Result<WeightMatrix> {
    if k == 0 {
        return invalid("top-K truncation needs k >= 1");
    }
    let mut kept = BTreeMap::new();
    let mut cut = BTreeMap::new();
    for (d, origins) in &weights.rows {
        if origins.len() <= k {
            // nothing to drop; skip renormalizing so truncation is idempotent
            kept.insert(d.clone(), origins.clone());
        } else {
            let mut v = origins.clone();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.truncate(k);
            cut.insert(d.clone(), v);
        }
    }
    let mut out = WeightMatrix::from_masses(cut);
    out.rows.extend(kept);
    Ok(out)
}

/// Share of each destination's inflow retained by top-K truncation.
pub fn top_k_coverage(weights: &WeightMatrix, k: usize) -> BTreeMap<String, f64> {
    weights
        .rows
        .iter()
        .map(|(d, origins)| {
            let mut s: Vec<f64> = origins.iter().map(|(_, w)| *w).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            (d.clone(), s.iter().take(k).sum())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub cz: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl Centroid {
    pub fn new(cz: impl Into<String>, latitude: f64, longitude: f64) -> Result<Self> {
        if !(latitude.abs() <= 90.0) || !(longitude.abs() <= 180.0) {
            return invalid(format!("coordinates out of range: ({latitude}, {longitude})"));
        }
        Ok(Self { cz: cz.into(), latitude, longitude })
    }
}

/// Haversine distance in kilometres.
pub fn great_circle_distance(a: &Centroid, b: &Centroid) -> f64 {
    let (p1, p2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dp = p2 - p1;
    let dl = (b.longitude - a.longitude).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Coordinate-wise population-weighted mean of (lat, lon, population) parts.
pub fn population_weighted_centroid(cz: &str, parts: &[(f64, f64, f64)]) -> Result<Centroid> {
    if parts.iter().any(|p| !(p.2 >= 0.0)) {
        return invalid("populations must be nonnegative");
    }
    let total: f64 = parts.iter().map(|p| p.2).sum();
    if !(total > 0.0) {
        return invalid(format!("zero total population for {cz}"));
    }
    let lat = parts.iter().map(|p| p.0 * p.2).sum::<f64>() / total;
    let lon = parts.iter().map(|p| p.1 * p.2).sum::<f64>() / total;
    Centroid::new(cz, lat, lon)
}

/// log(flow_od) = intercept + pop_origin·log pop_o + pop_dest·log pop_d
/// + distance·log dist_od.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityModel {
    pub intercept: f64,
    pub pop_origin: f64,
    pub pop_dest: f64,
    pub distance: f64,
}

impl GravityModel {
    pub fn log_flow(&self, pop_o: f64, pop_d: f64, dist_km: f64) -> f64 {
        self.intercept + self.pop_origin * pop_o.ln() + self.pop_dest * pop_d.ln() + self.distance * dist_km.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GravityFit {
    pub model: GravityModel,
    /// Classical OLS standard errors in (intercept, pop_o, pop_d, dist) order.
    pub std_errors: [f64; 4],
    pub n_pairs: usize,
    /// Pairs with zero flow, excluded because the log is undefined.
    pub zero_flows_dropped: usize,
}

pub const MIN_GRAVITY_PAIRS: usize = 5;

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, key: &str, what: &str) -> Result<&'a T> {
    map.get(key).ok_or_else(|| CoreError::InvalidInput(format!("no {what} for {key}")))
}

fn distance_between(centroids: &BTreeMap<String, Centroid>, o: &str, d: &str) -> Result<f64> {
    let dist = great_circle_distance(lookup(centroids, o, "centroid")?, lookup(centroids, d, "centroid")?);
    if !(dist > 0.0) {
        return invalid(format!("zero distance between distinct places {o} and {d}"));
    }
    Ok(dist)
}

fn log_population(pops: &BTreeMap<String, f64>, cz: &str) -> Result<f64> {
    let p = *lookup(pops, cz, "population")?;
    if !(p > 0.0) {
        return invalid(format!("population of {cz} must be positive"));
    }
    Ok(p.ln())
}

/// OLS of log flow on log populations and log distance over o ≠ d pairs
/// with positive flow.
pub fn fit_gravity(
    flows: &FlowTable,
    pops: &BTreeMap<String, f64>,
    centroids: &BTreeMap<String, Centroid>,
) -> Result<GravityFit> {
    let mut y = Vec::new();
    let mut cols = vec![Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut zero = 0;
    for (o, d, c) in flows.iter() {
        if o == d {
            continue;
        }
        if c <= 0.0 {
            zero += 1;
            continue;
        }
        y.push(c.ln());
        cols[0].push(1.0);
        cols[1].push(log_population(pops, o)?);
        cols[2].push(log_population(pops, d)?);
        cols[3].push(distance_between(centroids, o, d)?.ln());
    }
    let n = y.len();
    if n < MIN_GRAVITY_PAIRS {
        return Err(CoreError::InsufficientData(format!(
            "{n} positive-flow pairs; gravity needs at least {MIN_GRAVITY_PAIRS}"
        )));
    }
    let names: Vec<String> = ["intercept", "log_pop_origin", "log_pop_dest", "log_distance"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ls = least_squares(&cols, &y, &names, &[])?;
    let sigma2 = if n > 4 {
        ls.residuals.iter().map(|r| r * r).sum::<f64>() / (n - 4) as f64
    } else {
        f64::NAN
    };
    let se = |j: usize| (sigma2 * ls.xtx_inv[(j, j)]).sqrt();
    Ok(GravityFit {
        model: GravityModel {
            intercept: ls.coef[0],
            pop_origin: ls.coef[1],
            pop_dest: ls.coef[2],
            distance: ls.coef[3],
        },
        std_errors: [se(0), se(1), se(2), se(3)],
        n_pairs: n,
        zero_flows_dropped: zero,
    })
}

/// ω̂_od = exp(fitted log flow) renormalized over o ≠ d, for every ordered
/// pair of places in `pops`.
pub fn predict_gravity_shares(
    model: &GravityModel,
    pops: &BTreeMap<String, f64>,
    centroids: &BTreeMap<String, Centroid>,
) -> Result<WeightMatrix> {
    let places: Vec<&String> = pops.keys().collect();
    let log_pop: Vec<f64> = places.iter().map(|p| log_population(pops, p)).collect::<Result<_>>()?;
    let mut rows = BTreeMap::new();
    for (j, d) in places.iter().enumerate() {
        let mut fitted = Vec::with_capacity(places.len());
        for (i, o) in places.iter().enumerate() {
            if i == j {
                continue;
            }
            let dist = distance_between(centroids, o, d)?;
            let lf = model.intercept + model.pop_origin * log_pop[i] + model.pop_dest * log_pop[j] + model.distance * dist.ln();
            fitted.push(((*o).clone(), lf));
        }
        // shift by the max before exponentiating; renormalization undoes it
        let top = fitted.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        let masses = fitted.into_iter().map(|(o, v)| (o, (v - top).exp())).collect();
        rows.insert((*d).clone(), masses);
    }
    Ok(WeightMatrix::from_masses(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flows(rows: &[(&str, &str, f64)]) -> FlowTable {
        FlowTable::new(rows.iter().map(|(o, d, c)| (o.to_string(), d.to_string(), *c))).unwrap()
    }

    #[test]
    fn rejects_negative_and_duplicate_rows() {
        assert!(FlowTable::new(vec![("a".into(), "b".into(), -1.0)]).is_err());
        assert!(FlowTable::new(vec![("a".into(), "b".into(), 1.0), ("a".into(), "b".into(), 2.0)]).is_err());
    }

    #[test]
    fn self_only_destination_is_omitted() {
        let w = normalize_in_shares(&flows(&[("a", "a", 10.0), ("a", "b", 3.0)]));
        assert!(w.shares("a").is_none());
        assert_eq!(w.shares("b").unwrap(), &[("a".to_string(), 1.0)]);
    }

    #[test]
    fn dominant_crosswalk_part() {
        let cw = Crosswalk::new(vec![
            ("c1".to_string(), "z1".to_string(), 0.4),
            ("c1".to_string(), "z2".to_string(), 0.6),
        ])
        .unwrap();
        assert_eq!(cw.dominant()["c1"], "z2");
        assert!(Crosswalk::new(vec![("c".to_string(), "z".to_string(), 0.5)]).is_err());
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(Centroid::new("x", 91.0, 0.0).is_err());
        assert!(Centroid::new("x", 0.0, -181.0).is_err());
        assert!(population_weighted_centroid("x", &[(1.0, 1.0, 0.0)]).is_err());
    }

    #[test]
    fn coverage_of_top_k() {
        let w = normalize_in_shares(&flows(&[("a", "d", 5.0), ("b", "d", 3.0), ("c", "d", 2.0)]));
        assert!((top_k_coverage(&w, 2)["d"] - 0.8).abs() < 1e-12);
    }
}
