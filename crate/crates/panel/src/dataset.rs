//! Column-oriented panel storage and regressor terms.
//!
//! A [`PanelDataset`] holds one row per (unit, period[, group]) cell. Numeric
//! columns carry outcomes and base regressors; key columns carry categorical
//! identifiers used for fixed effects, clustering and sample filters. The
//! built-in keys `unit`, `period`, `group` and `cluster` are always available.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::error::{invalid, EstimationError, Result};

const BUILTIN_KEYS: [&str; 4] = ["unit", "period", "group", "cluster"];

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit: Vec<String>,
    period: Vec<i32>,
    group: Option<Vec<String>>,
    cluster: Vec<String>,
    weight: Vec<f64>,
    columns: BTreeMap<String, Vec<f64>>,
    keys: BTreeMap<String, Vec<String>>,
}

impl PanelDataset {
    /// Creates a panel with unit-level clusters and unit weights.
    ///
    /// Fails when a (unit, period, group) cell appears twice.
    pub fn new(unit: Vec<String>, period: Vec<i32>, group: Option<Vec<String>>) -> Result<Self> {
        let n = unit.len();
        if period.len() != n {
            return invalid(format!("period length {} != unit length {n}", period.len()));
        }
        if let Some(g) = &group {
            if g.len() != n {
                return invalid(format!("group length {} != unit length {n}", g.len()));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for i in 0..n {
            let g = group.as_ref().map(|g| g[i].as_str()).unwrap_or("");
            if !seen.insert((unit[i].as_str(), period[i], g)) {
                return invalid(format!(
                    "duplicate cell (unit={}, period={}, group={g}) at row {i}",
                    unit[i], period[i]
                ));
            }
        }
        Ok(Self {
            cluster: unit.clone(),
            unit,
            period,
            group,
            weight: vec![1.0; n],
            columns: BTreeMap::new(),
            keys: BTreeMap::new(),
        })
    }

    pub fn with_cluster(mut self, cluster: Vec<String>) -> Result<Self> {
        if cluster.len() != self.len() {
            return invalid("cluster length does not match panel length");
        }
        self.cluster = cluster;
        Ok(self)
    }

    pub fn with_weights(mut self, weight: Vec<f64>) -> Result<Self> {
        if weight.len() != self.len() {
            return invalid("weight length does not match panel length");
        }
        if let Some(i) = weight.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return invalid(format!("weight at row {i} is not a positive finite number"));
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.set_column(name, values)?;
        Ok(self)
    }

    /// Inserts or replaces a numeric column.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return invalid(format!("column `{name}` has {} rows, panel has {}", values.len(), self.len()));
        }
        if name.contains('*') || name.contains('=') || name.contains('^') {
            return invalid(format!("column name `{name}` contains a reserved character"));
        }
        if BUILTIN_KEYS.contains(&name) || self.keys.contains_key(name) {
            return invalid(format!("column name `{name}` collides with a key"));
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn with_key(mut self, name: &str, values: Vec<String>) -> Result<Self> {
        if values.len() != self.len() {
            return invalid(format!("key `{name}` has {} rows, panel has {}", values.len(), self.len()));
        }
        if BUILTIN_KEYS.contains(&name) || self.columns.contains_key(name) {
            return invalid(format!("key name `{name}` collides with an existing name"));
        }
        self.keys.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    pub fn units(&self) -> &[String] {
        &self.unit
    }

    pub fn periods(&self) -> &[i32] {
        &self.period
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.group.as_deref()
    }

    pub fn clusters(&self) -> &[String] {
        &self.cluster
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn key_names(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    /// Numeric column by name. `period` resolves to the period as a number.
    pub fn column(&self, name: &str) -> Result<std::borrow::Cow<'_, [f64]>> {
        if let Some(c) = self.columns.get(name) {
            return Ok(std::borrow::Cow::Borrowed(c));
        }
        if name == "period" {
            return Ok(std::borrow::Cow::Owned(self.period.iter().map(|&p| p as f64).collect()));
        }
        Err(EstimationError::UnknownColumn(name.to_string()))
    }

    /// Categorical key values by name, as strings.
    pub fn key(&self, name: &str) -> Result<Vec<String>> {
        match name {
            "unit" => Ok(self.unit.clone()),
            "period" => Ok(self.period.iter().map(i32::to_string).collect()),
            "cluster" => Ok(self.cluster.clone()),
            "group" => self
                .group
                .clone()
                .ok_or_else(|| EstimationError::UnknownColumn("group".to_string())),
            other => self
                .keys
                .get(other)
                .cloned()
                .ok_or_else(|| EstimationError::UnknownColumn(other.to_string())),
        }
    }

    /// Evaluates a regressor term row by row.
    pub fn term(&self, term: &Term) -> Result<Vec<f64>> {
        let mut out = vec![1.0; self.len()];
        for factor in &term.factors {
            match factor {
                Factor::Column(name) => {
                    let col = self.column(name)?;
                    out.iter_mut().zip(col.iter()).for_each(|(o, v)| *o *= v);
                }
                Factor::Indicator { key, value } => {
                    let k = self.key(key)?;
                    out.iter_mut()
                        .zip(k.iter())
                        .for_each(|(o, v)| *o *= if v == value { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(out)
    }

    /// Keeps the rows where `keep` is true.
    pub fn select(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return invalid("row mask length does not match panel length");
        }
        fn pick<T: Clone>(v: &[T], keep: &[bool]) -> Vec<T> {
            v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| x.clone()).collect()
        }
        Ok(Self {
            unit: pick(&self.unit, keep),
            period: pick(&self.period, keep),
            group: self.group.as_ref().map(|g| pick(g, keep)),
            cluster: pick(&self.cluster, keep),
            weight: pick(&self.weight, keep),
            columns: self.columns.iter().map(|(k, v)| (k.clone(), pick(v, keep))).collect(),
            keys: self.keys.iter().map(|(k, v)| (k.clone(), pick(v, keep))).collect(),
        })
    }

    /// Drops every row whose `key` takes one of `values`.
    pub fn exclude(&self, key: &str, values: &[String]) -> Result<Self> {
        let k = self.key(key)?;
        let drop: HashSet<&str> = values.iter().map(String::as_str).collect();
        let keep: Vec<bool> = k.iter().map(|v| !drop.contains(v.as_str())).collect();
        self.select(&keep)
    }
}

/// One multiplicative piece of a regressor term.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Factor {
    Column(String),
    /// `key=value`: one where the key matches, zero elsewhere.
    Indicator { key: String, value: String },
}

/// Product of factors, written `a*b*c` with `key=value` indicator factors,
/// e.g. `mpw*post` or `mpw*period=2017`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    factors: Vec<Factor>,
}

impl Term {
    pub fn parse(s: &str) -> Result<Self> {
        let mut factors = Vec::new();
        for raw in s.split('*') {
            let f = raw.trim();
            if f.is_empty() {
                return invalid(format!("empty factor in term `{s}`"));
            }
            match f.split_once('=') {
                Some((k, v)) => factors.push(Factor::Indicator {
                    key: k.trim().to_string(),
                    value: v.trim().to_string(),
                }),
                None => factors.push(Factor::Column(f.to_string())),
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Whether the term multiplies in the named numeric column.
    pub fn uses_column(&self, name: &str) -> bool {
        self.factors.iter().any(|f| matches!(f, Factor::Column(c) if c == name))
    }

    /// Returns the term with every occurrence of column `from` renamed to `to`.
    pub fn replace_column(&self, from: &str, to: &str) -> Self {
        let factors = self
            .factors
            .iter()
            .map(|f| match f {
                Factor::Column(c) if c == from => Factor::Column(to.to_string()),
                other => other.clone(),
            })
            .collect();
        Self { factors }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            match factor {
                Factor::Column(c) => f.write_str(c)?,
                Factor::Indicator { key, value } => write!(f, "{key}={value}")?,
            }
        }
        Ok(())
    }
}

/// Event-study terms: `exposure` times one indicator per period, skipping the
/// reference period. Returned in ascending period order.
pub fn event_study_terms(exposure: &str, periods: &[i32], reference: i32) -> Result<Vec<(i32, Term)>> {
    let mut ps: Vec<i32> = periods.to_vec();
    ps.sort_unstable();
    ps.dedup();
    if !ps.contains(&reference) {
        return invalid(format!("reference period {reference} not present in panel"));
    }
    ps.into_iter()
        .filter(|&p| p != reference)
        .map(|p| Ok((p, Term::parse(&format!("{exposure}*period={p}"))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PanelDataset {
        let units = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        PanelDataset::new(units, vec![1, 2, 1, 2], None)
            .unwrap()
            .with_column("x", vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_column("post", vec![0.0, 1.0, 0.0, 1.0])
            .unwrap()
    }

    #[test]
    fn duplicate_cells_rejected() {
        let units = vec!["a".to_string(), "a".to_string()];
        assert!(PanelDataset::new(units, vec![1, 1], None).is_err());
    }

    #[test]
    fn product_and_indicator_terms() {
        let d = tiny();
        let t = Term::parse("x*post").unwrap();
        assert_eq!(d.term(&t).unwrap(), vec![0.0, 2.0, 0.0, 4.0]);
        let t = Term::parse("x*period=1").unwrap();
        assert_eq!(d.term(&t).unwrap(), vec![1.0, 0.0, 3.0, 0.0]);
        assert_eq!(t.to_string(), "x*period=1");
    }

    #[test]
    fn exclude_drops_rows() {
        let d = tiny().exclude("unit", &["a".to_string()]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.column("x").unwrap().to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn event_terms_skip_reference() {
        let t = event_study_terms("mpw", &[2019, 2017, 2018, 2019], 2018).unwrap();
        let years: Vec<i32> = t.iter().map(|(y, _)| *y).collect();
        assert_eq!(years, vec![2017, 2019]);
        assert!(event_study_terms("mpw", &[2017], 2019).is_err());
    }
}
