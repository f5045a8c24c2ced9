//! Fixed-effect absorption by alternating projections.
//!
//! Each fixed-effect set is a single key or an interaction of keys (written
//! `a^b`). With one set the projection is exact group demeaning; with several
//! sets the weighted group means are swept out in turn until the largest
//! subtracted mean in a sweep drops below the tolerance.

use std::collections::HashMap;
use std::fmt;

use crate::dataset::PanelDataset;
use crate::error::{invalid, EstimationError, Result};

/// One fixed-effect dimension: a key or an interaction of keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeSet(Vec<String>);

impl FeSet {
    pub fn new<S: Into<String>>(keys: impl IntoIterator<Item = S>) -> Result<Self> {
        let keys: Vec<String> = keys.into_iter().map(Into::into).collect();
        if keys.is_empty() {
            return invalid("fixed-effect set needs at least one key");
        }
        Ok(Self(keys))
    }

    pub fn single(key: &str) -> Self {
        Self(vec![key.to_string()])
    }

    pub fn pair(a: &str, b: &str) -> Self {
        Self(vec![a.to_string(), b.to_string()])
    }

    /// Parses `unit`, `unit^period`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let keys: Vec<String> = s.split('^').map(|k| k.trim().to_string()).collect();
        if keys.iter().any(String::is_empty) {
            return invalid(format!("malformed fixed-effect set `{s}`"));
        }
        Self::new(keys)
    }

    pub fn keys(&self) -> &[String] {
        &self.0
    }

    /// Dense group ids (first-appearance order) for every row of `data`.
    pub fn group_ids(&self, data: &PanelDataset) -> Result<Vec<usize>> {
        let cols: Vec<Vec<String>> = self.0.iter().map(|k| data.key(k)).collect::<Result<_>>()?;
        let n = data.len();
        if cols.len() == 1 {
            return Ok(dense_ids(cols[0].iter().map(String::as_str)));
        }
        let joined: Vec<String> = (0..n)
            .map(|i| cols.iter().map(|c| c[i].as_str()).collect::<Vec<_>>().join("\u{1f}"))
            .collect();
        Ok(dense_ids(joined.iter().map(String::as_str)))
    }
}

impl fmt::Display for FeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("^"))
    }
}

/// Maps arbitrary labels to 0..G in order of first appearance.
pub fn dense_ids<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut map: HashMap<&'a str, usize> = HashMap::new();
    labels
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemeanOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DemeanOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
struct GroupIndex {
    ids: Vec<usize>,
    weight_sum: Vec<f64>,
}

impl GroupIndex {
    fn new(ids: Vec<usize>, weights: &[f64]) -> Self {
        let g = ids.iter().max().map_or(0, |m| m + 1);
        let mut weight_sum = vec![0.0; g];
        for (&id, &w) in ids.iter().zip(weights) {
            weight_sum[id] += w;
        }
        Self { ids, weight_sum }
    }

    fn n_groups(&self) -> usize {
        self.weight_sum.len()
    }

    /// Weighted group means of `x`, reusing `buf`.
    fn means(&self, x: &[f64], weights: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.resize(self.n_groups(), 0.0);
        for ((&id, &v), &w) in self.ids.iter().zip(x).zip(weights) {
            buf[id] += w * v;
        }
        for (m, &ws) in buf.iter_mut().zip(&self.weight_sum) {
            *m /= ws;
        }
    }
}

/// A column after absorption, with the number of sweeps it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Demeaned {
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Precomputed group structure for repeatedly absorbing the same fixed effects.
#[derive(Debug, Clone)]
pub struct Absorber {
    sets: Vec<GroupIndex>,
    weights: Vec<f64>,
    opts: DemeanOptions,
    singletons: usize,
}

impl Absorber {
    pub fn new(data: &PanelDataset, fe_sets: &[FeSet], opts: DemeanOptions) -> Result<Self> {
        let ids = fe_sets.iter().map(|s| s.group_ids(data)).collect::<Result<Vec<_>>>()?;
        Self::from_ids(ids, data.weights().to_vec(), opts)
    }

    /// Builds an absorber from raw group ids, one vector per fixed-effect set.
    pub fn from_ids(ids: Vec<Vec<usize>>, weights: Vec<f64>, opts: DemeanOptions) -> Result<Self> {
        if ids.is_empty() {
            return invalid("at least one fixed-effect set is required");
        }
        let n = weights.len();
        if ids.iter().any(|v| v.len() != n) {
            return invalid("group id vectors must match the number of rows");
        }
        if !(opts.tol > 0.0) || opts.max_iter == 0 {
            return invalid("demeaning tolerance and iteration cap must be positive");
        }
        let sets: Vec<GroupIndex> = ids.into_iter().map(|v| GroupIndex::new(v, &weights)).collect();
        let mut singleton_row = vec![false; n];
        for set in &sets {
            let mut counts = vec![0usize; set.n_groups()];
            set.ids.iter().for_each(|&g| counts[g] += 1);
            for (i, &g) in set.ids.iter().enumerate() {
                if counts[g] == 1 {
                    singleton_row[i] = true;
                }
            }
        }
        let singletons = singleton_row.iter().filter(|s| **s).count();
        Ok(Self { sets, weights, opts, singletons })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Rows that are the only member of a group in some fixed-effect set.
    pub fn singletons(&self) -> usize {
        self.singletons
    }

    pub fn n_groups(&self) -> Vec<usize> {
        self.sets.iter().map(GroupIndex::n_groups).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn demean(&self, x: &[f64]) -> Result<Demeaned> {
        if x.len() != self.len() {
            return invalid("column length does not match absorber");
        }
        let mut v = x.to_vec();
        let mut buf = Vec::new();
        if self.sets.len() == 1 {
            self.sweep(&self.sets[0], &mut v, &mut buf);
            return Ok(Demeaned { values: v, iterations: 1 });
        }
        // Stop on absolute change, scaled up for columns far above unit size.
        let scale = x.iter().fold(1.0_f64, |m, a| m.max(a.abs()));
        let tol = self.opts.tol * scale;
        let mut last = f64::INFINITY;
        for it in 1..=self.opts.max_iter {
            let mut change = 0.0_f64;
            for set in &self.sets {
                change = change.max(self.sweep(set, &mut v, &mut buf));
            }
            last = change;
            if change < tol {
                return Ok(Demeaned { values: v, iterations: it });
            }
        }
        Err(EstimationError::NoConvergence { iterations: self.opts.max_iter, last_change: last })
    }

    fn sweep(&self, set: &GroupIndex, v: &mut [f64], buf: &mut Vec<f64>) -> f64 {
        set.means(v, &self.weights, buf);
        for (x, &g) in v.iter_mut().zip(&set.ids) {
            *x -= buf[g];
        }
        buf.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }

    /// Recovers group effects whose sum best fits `residual` in weighted
    /// least squares (backfitting). Effects are identified only up to the
    /// usual normalisations; callers normalise as their model requires.
    pub fn effects(&self, residual: &[f64]) -> Result<Vec<Vec<f64>>> {
        if residual.len() != self.len() {
            return invalid("residual length does not match absorber");
        }
        let n = self.len();
        let mut effects: Vec<Vec<f64>> = self.sets.iter().map(|s| vec![0.0; s.n_groups()]).collect();
        let mut fitted = vec![0.0; n];
        let mut partial = vec![0.0; n];
        let mut buf = Vec::new();
        let scale = residual.iter().fold(1.0_f64, |m, a| m.max(a.abs()));
        let mut last = f64::INFINITY;
        for _ in 0..self.opts.max_iter {
            let mut change = 0.0_f64;
            for (k, set) in self.sets.iter().enumerate() {
                for i in 0..n {
                    partial[i] = residual[i] - fitted[i] + effects[k][set.ids[i]];
                }
                set.means(&partial, &self.weights, &mut buf);
                for (g, &m) in buf.iter().enumerate() {
                    change = change.max((m - effects[k][g]).abs());
                }
                for i in 0..n {
                    fitted[i] += buf[set.ids[i]] - effects[k][set.ids[i]];
                }
                effects[k].copy_from_slice(&buf);
            }
            last = change;
            if self.sets.len() == 1 || change < self.opts.tol * scale {
                return Ok(effects);
            }
        }
        Err(EstimationError::NoConvergence { iterations: self.opts.max_iter, last_change: last })
    }
}

/// Absorbs `fe_sets` from the named columns of `data`.
pub fn demean_fe(
    data: &PanelDataset,
    fe_sets: &[FeSet],
    columns: &[&str],
    opts: DemeanOptions,
) -> Result<Vec<Demeaned>> {
    if fe_sets.is_empty() {
        return invalid("fe_sets must be non-empty");
    }
    let absorber = Absorber::new(data, fe_sets, opts)?;
    columns
        .iter()
        .map(|c| absorber.demean(&data.column(c)?))
        .collect()
}
