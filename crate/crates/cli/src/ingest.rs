//! Schema-checked CSV ingestion. Every row-level problem is reported with
//! the file, the 1-based line (header is line 1) and the column.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use lockin_core::{Centroid, Crosswalk, ExposureRow, ExposureTable, FlowTable, LoanRecord, LoanSet};
use lockin_panel::PanelDataset;

use crate::config::InputPaths;
use crate::error::{CliError, Result};
use crate::output::EventStudyPoint;

/// Row and column counts of one ingested file, with missing values per
/// column (only columns that have any).
#[derive(Debug, Clone, PartialEq)]
pub struct TableSummary {
    pub file: String,
    pub rows: usize,
    pub columns: usize,
    pub missing: Vec<(String, usize)>,
}

impl fmt::Display for TableSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} rows, {} columns, missing: ", self.file, self.rows, self.columns)?;
        if self.missing.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.missing.iter().map(|(c, n)| format!("{c}={n}")).collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Clone)]
pub struct Tables {
    pub loans: LoanSet,
    /// County-to-county flows.
    pub flows: FlowTable,
    pub crosswalk: Crosswalk,
    pub centroids: Option<BTreeMap<String, Centroid>>,
    pub populations: Option<BTreeMap<String, f64>>,
    pub panel: Option<PanelDataset>,
    pub soc_panel: Option<PanelDataset>,
    pub summaries: Vec<TableSummary>,
}

/// Loads and checks every configured input.
pub fn ingest(inputs: &InputPaths) -> Result<Tables> {
    let mut summaries = Vec::new();
    let loans = read_loans(&inputs.loans)?;
    summaries.push(loans.1);
    let flows = read_flows(&inputs.flows)?;
    summaries.push(flows.1);
    let crosswalk = read_crosswalk(&inputs.crosswalk)?;
    summaries.push(crosswalk.1);
    let (centroids, populations) = match &inputs.centroids {
        Some(p) => {
            let (c, pops, s) = read_centroids(p)?;
            summaries.push(s);
            (Some(c), Some(pops))
        }
        None => (None, None),
    };
    let panel = match &inputs.panel {
        Some(p) => {
            let (d, s) = read_panel(p)?;
            summaries.push(s);
            Some(d)
        }
        None => None,
    };
    let mut soc_panel = match &inputs.soc_panel {
        Some(p) => {
            let (d, s) = read_panel(p)?;
            summaries.push(s);
            Some(d)
        }
        None => None,
    };
    if let Some(p) = &inputs.bartik {
        let (cells, s) = read_bartik(p)?;
        summaries.push(s);
        if let Some(d) = soc_panel.take() {
            soc_panel = Some(merge_bartik(d, &cells, &file_label(p))?);
        }
    }
    Ok(Tables {
        loans: loans.0,
        flows: flows.0,
        crosswalk: crosswalk.0,
        centroids,
        populations,
        panel,
        soc_panel,
        summaries,
    })
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// A parsed CSV file with line numbers kept for error reporting.
struct Sheet {
    file: String,
    headers: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Sheet {
    fn open(path: &Path) -> Result<Self> {
        let file = file_label(path);
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Input { file: file.clone(), message: e.to_string() })?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Input { file: file.clone(), message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut index = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if h.is_empty() {
                return Err(CliError::Validation { file, line: 1, column: format!("#{}", i + 1), message: "empty column name".into() });
            }
            if index.insert(h.clone(), i).is_some() {
                return Err(CliError::Validation { file, line: 1, column: h.clone(), message: "duplicate column".into() });
            }
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                CliError::Validation { file: file.clone(), line, column: String::new(), message: e.to_string() }
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self { file, headers, index, rows })
    }

    /// Fails on missing required columns and, unless `extras` is set, on
    /// columns outside `required` and `optional`.
    fn check_columns(&self, required: &[&str], optional: &[&str], extras: bool) -> Result<()> {
        for r in required {
            if !self.index.contains_key(*r) {
                return Err(self.err(1, r, "missing required column"));
            }
        }
        if !extras {
            for h in &self.headers {
                if !required.contains(&h.as_str()) && !optional.contains(&h.as_str()) {
                    return Err(self.err(1, h, "unknown column"));
                }
            }
        }
        Ok(())
    }

    fn err(&self, line: u64, column: &str, message: impl Into<String>) -> CliError {
        CliError::Validation { file: self.file.clone(), line, column: column.to_string(), message: message.into() }
    }

    fn raw<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        self.index.get(col).and_then(|&i| rec.get(i)).unwrap_or("")
    }

    fn text(&self, line: u64, rec: &csv::StringRecord, col: &str) -> Result<String> {
        let v = self.raw(rec, col);
        if v.is_empty() {
            return Err(self.err(line, col, "missing value"));
        }
        Ok(v.to_string())
    }

    fn num_opt(&self, line: u64, rec: &csv::StringRecord, col: &str) -> Result<Option<f64>> {
        let v = self.raw(rec, col);
        if v.is_empty() {
            return Ok(None);
        }
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(self.err(line, col, format!("expected a finite number, got `{v}`"))),
        }
    }

    fn num(&self, line: u64, rec: &csv::StringRecord, col: &str) -> Result<f64> {
        self.num_opt(line, rec, col)?.ok_or_else(|| self.err(line, col, "missing value"))
    }

    fn int(&self, line: u64, rec: &csv::StringRecord, col: &str) -> Result<i32> {
        let v = self.text(line, rec, col)?;
        v.parse().map_err(|_| self.err(line, col, format!("expected an integer, got `{v}`")))
    }

    fn summary(&self, missing: Vec<(String, usize)>) -> TableSummary {
        TableSummary {
            file: self.file.clone(),
            rows: self.rows.len(),
            columns: self.headers.len(),
            missing: missing.into_iter().filter(|(_, n)| *n > 0).collect(),
        }
    }
}

/// Tracks first occurrences of a composite key.
struct KeyCheck<K> {
    seen: HashMap<K, u64>,
}

impl<K: std::hash::Hash + Eq> KeyCheck<K> {
    fn new() -> Self {
        Self { seen: HashMap::new() }
    }

    fn insert(&mut self, sheet: &Sheet, line: u64, column: &str, key: K) -> Result<()> {
        if let Some(first) = self.seen.insert(key, line) {
            return Err(sheet.err(line, column, format!("duplicate key (first seen on line {first})")));
        }
        Ok(())
    }
}

const LOAN_COLUMNS: [&str; 6] = ["loan_id", "county", "lender", "vintage_year", "annual_rate", "principal"];

/// Loans: the fixed columns followed by numeric covariates (any further
/// columns, in header order).
pub fn read_loans(path: &Path) -> Result<(LoanSet, TableSummary)> {
    let sheet = Sheet::open(path)?;
    sheet.check_columns(&LOAN_COLUMNS, &[], true)?;
    let covariates: Vec<String> = sheet.headers.iter().filter(|h| !LOAN_COLUMNS.contains(&h.as_str())).cloned().collect();
    let mut keys = KeyCheck::new();
    let mut loans = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let loan_id = sheet.text(line, rec, "loan_id")?;
        keys.insert(&sheet, line, "loan_id", loan_id.clone())?;
        let principal = sheet.num(line, rec, "principal")?;
        if !(principal > 0.0) {
            return Err(sheet.err(line, "principal", "principal must be positive"));
        }
        loans.push(LoanRecord {
            loan_id,
            county: sheet.text(line, rec, "county")?,
            lender: sheet.text(line, rec, "lender")?,
            vintage_year: sheet.int(line, rec, "vintage_year")?,
            annual_rate: sheet.num(line, rec, "annual_rate")?,
            principal,
            covariates: covariates.iter().map(|c| sheet.num(line, rec, c)).collect::<Result<_>>()?,
        });
    }
    let set = LoanSet::new(covariates, loans).map_err(|e| CliError::Input { file: sheet.file.clone(), message: e.to_string() })?;
    Ok((set, sheet.summary(Vec::new())))
}

pub fn read_flows(path: &Path) -> Result<(FlowTable, TableSummary)> {
    let sheet = Sheet::open(path)?;
    sheet.check_columns(&["origin", "destination", "count"], &[], false)?;
    let mut keys = KeyCheck::new();
    let mut rows = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let o = sheet.text(line, rec, "origin")?;
        let d = sheet.text(line, rec, "destination")?;
        let c = sheet.num(line, rec, "count")?;
        if c < 0.0 {
            return Err(sheet.err(line, "count", format!("negative flow count {c}")));
        }
        keys.insert(&sheet, line, "destination", (o.clone(), d.clone()))?;
        rows.push((o, d, c));
    }
    let table = FlowTable::new(rows).map_err(|e| CliError::Input { file: sheet.file.clone(), message: e.to_string() })?;
    Ok((table, sheet.summary(Vec::new())))
}

pub fn read_crosswalk(path: &Path) -> Result<(Crosswalk, TableSummary)> {
    let sheet = Sheet::open(path)?;
    sheet.check_columns(&["county", "cz", "weight"], &[], false)?;
    let mut keys = KeyCheck::new();
    let mut rows = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let county = sheet.text(line, rec, "county")?;
        let cz = sheet.text(line, rec, "cz")?;
        let w = sheet.num(line, rec, "weight")?;
        if w < 0.0 {
            return Err(sheet.err(line, "weight", "negative weight"));
        }
        keys.insert(&sheet, line, "cz", (county.clone(), cz.clone()))?;
        rows.push((county, cz, w));
    }
    let cw = Crosswalk::new(rows).map_err(|e| CliError::Input { file: sheet.file.clone(), message: e.to_string() })?;
    Ok((cw, sheet.summary(Vec::new())))
}

type CentroidTables = (BTreeMap<String, Centroid>, BTreeMap<String, f64>, TableSummary);

pub fn read_centroids(path: &Path) -> Result<CentroidTables> {
    let sheet = Sheet::open(path)?;
    sheet.check_columns(&["cz", "latitude", "longitude", "population"], &[], false)?;
    let mut keys = KeyCheck::new();
    let (mut centroids, mut pops) = (BTreeMap::new(), BTreeMap::new());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let cz = sheet.text(line, rec, "cz")?;
        keys.insert(&sheet, line, "cz", cz.clone())?;
        let lat = sheet.num(line, rec, "latitude")?;
        let lon = sheet.num(line, rec, "longitude")?;
        let c = Centroid::new(cz.clone(), lat, lon).map_err(|e| sheet.err(line, "latitude", e.to_string()))?;
        let pop = sheet.num(line, rec, "population")?;
        if !(pop > 0.0) {
            return Err(sheet.err(line, "population", "population must be positive"));
        }
        centroids.insert(cz.clone(), c);
        pops.insert(cz, pop);
    }
    Ok((centroids, pops, sheet.summary(Vec::new())))
}

const PANEL_KEYS: [&str; 5] = ["unit", "period", "group", "cluster", "weight"];

/// Outcome panel: `unit`, `period`, optional `group`, `cluster` (defaults to
/// the unit) and `weight`; every other column is numeric and may be empty.
pub fn read_panel(path: &Path) -> Result<(PanelDataset, TableSummary)> {
    let sheet = Sheet::open(path)?;
    sheet.check_columns(&["unit", "period"], &PANEL_KEYS[2..], true)?;
    let has = |c: &str| sheet.index.contains_key(c);
    let numeric: Vec<String> = sheet.headers.iter().filter(|h| !PANEL_KEYS.contains(&h.as_str())).cloned().collect();
    let n = sheet.rows.len();
    let (mut unit, mut period, mut group, mut cluster, mut weight) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::new(), Vec::new(), Vec::new());
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); numeric.len()];
    let mut missing = vec![0usize; numeric.len()];
    let mut keys = KeyCheck::new();
    for (line, rec) in &sheet.rows {
        let line = *line;
        let u = sheet.text(line, rec, "unit")?;
        let p = sheet.int(line, rec, "period")?;
        let g = if has("group") { sheet.text(line, rec, "group")? } else { String::new() };
        keys.insert(&sheet, line, "period", (u.clone(), p, g.clone()))?;
        if has("group") {
            group.push(g);
        }
        if has("cluster") {
            cluster.push(sheet.text(line, rec, "cluster")?);
        }
        if has("weight") {
            let w = sheet.num(line, rec, "weight")?;
            if !(w > 0.0) {
                return Err(sheet.err(line, "weight", "weight must be positive"));
            }
            weight.push(w);
        }
        for (j, c) in numeric.iter().enumerate() {
            let v = sheet.num_opt(line, rec, c)?;
            missing[j] += usize::from(v.is_none());
            cols[j].push(v.unwrap_or(f64::NAN));
        }
        unit.push(u);
        period.push(p);
    }
    let wrap = |e: lockin_panel::EstimationError| CliError::Input { file: sheet.file.clone(), message: e.to_string() };
    let mut d = PanelDataset::new(unit, period, has("group").then_some(group)).map_err(wrap)?;
    if has("cluster") {
        d = d.with_cluster(cluster).map_err(wrap)?;
    }
    if has("weight") {
        d = d.with_weights(weight).map_err(wrap)?;
    }
    for (c, v) in numeric.iter().zip(cols) {
        d = d.with_column(c, v).map_err(|e| sheet.err(1, c, e.to_string()))?;
    }
    let summary = sheet.summary(numeric.into_iter().zip(missing).collect());
    Ok((d, summary))
}

type BartikRows = BTreeMap<(String, String, i32), f64>;

pub fn read_bartik(path: &Path) -> Result<(BartikRows, TableSummary)> {
    let sheet = Sheet::open(path)?;
    sheet.check_columns(&["cz", "soc", "year", "b"], &[], false)?;
    let mut keys = KeyCheck::new();
    let mut cells = BTreeMap::new();
    for (line, rec) in &sheet.rows {
        let line = *line;
        let key = (sheet.text(line, rec, "cz")?, sheet.text(line, rec, "soc")?, sheet.int(line, rec, "year")?);
        keys.insert(&sheet, line, "year", key.clone())?;
        cells.insert(key, sheet.num(line, rec, "b")?);
    }
    Ok((cells, sheet.summary(Vec::new())))
}

/// Adds the Bartik shock of each (unit, group, period) row as column `b`.
fn merge_bartik(data: PanelDataset, cells: &BartikRows, file: &str) -> Result<PanelDataset> {
    let Some(groups) = data.groups() else {
        return Err(CliError::Input { file: file.to_string(), message: "bartik shocks need a SOC panel with a `group` column".into() });
    };
    let mut b = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let key = (data.units()[i].clone(), groups[i].clone(), data.periods()[i]);
        match cells.get(&key) {
            Some(v) => b.push(*v),
            None => {
                return Err(CliError::Input {
                    file: file.to_string(),
                    message: format!("no shock for cz {} soc {} year {}", key.0, key.1, key.2),
                })
            }
        }
    }
    data.with_column("b", b).map_err(|e| CliError::Input { file: file.to_string(), message: e.to_string() })
}

/// Relative tolerance of the `mpw = p_new - wop` check; emitted files carry
/// 10 significant digits, so exact equality cannot survive a round trip.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Exposure file (`cz, p_new, wop, mpw` plus optional `predicted_wop` and
/// `mpw_top*` columns). Rows where all three are present must satisfy the
/// wedge identity.
pub fn read_exposure(path: &Path) -> Result<(ExposureTable, TableSummary)> {
    let sheet = Sheet::open(path)?;
    let required = ["cz", "p_new", "wop", "mpw"];
    sheet.check_columns(&required, &["predicted_wop"], true)?;
    for h in &sheet.headers {
        if !required.contains(&h.as_str()) && h != "predicted_wop" && !h.starts_with("mpw_top") {
            return Err(sheet.err(1, h, "unknown column"));
        }
    }
    let mut keys = KeyCheck::new();
    let mut rows = Vec::with_capacity(sheet.rows.len());
    let value_cols: Vec<&String> = sheet.headers.iter().filter(|h| *h != "cz").collect();
    let mut missing = vec![0usize; value_cols.len()];
    for (line, rec) in &sheet.rows {
        let line = *line;
        let cz = sheet.text(line, rec, "cz")?;
        keys.insert(&sheet, line, "cz", cz.clone())?;
        for (j, c) in value_cols.iter().enumerate() {
            missing[j] += usize::from(sheet.num_opt(line, rec, c)?.is_none());
        }
        let p = sheet.num_opt(line, rec, "p_new")?;
        let w = sheet.num_opt(line, rec, "wop")?;
        let m = sheet.num_opt(line, rec, "mpw")?;
        match (p, w, m) {
            (Some(p), Some(w), Some(m)) => {
                let scale = p.abs().max(w.abs()).max(1.0);
                if (m - (p - w)).abs() > IDENTITY_TOL * scale {
                    return Err(sheet.err(line, "mpw", format!("mpw {m} differs from p_new - wop = {}", p - w)));
                }
            }
            (Some(_), Some(_), None) => return Err(sheet.err(line, "mpw", "mpw missing although p_new and wop are present")),
            (_, _, Some(_)) => return Err(sheet.err(line, "mpw", "mpw present although p_new or wop is missing")),
            _ => {}
        }
        let mut row = ExposureRow::new(cz, p, w);
        row.mpw = m;
        row.predicted_wop = sheet.num_opt(line, rec, "predicted_wop")?;
        rows.push(row);
    }
    let table = ExposureTable::from_rows(rows).map_err(|e| CliError::Input { file: sheet.file.clone(), message: e.to_string() })?;
    let summary = sheet.summary(value_cols.into_iter().cloned().zip(missing).collect());
    Ok((table, summary))
}

/// Reads back an `eventstudy.csv`.
pub fn read_event_study(path: &Path) -> Result<Vec<EventStudyPoint>> {
    let sheet = Sheet::open(path)?;
    let cols = ["model", "year", "coef", "se", "ci_lo", "ci_hi", "reference"];
    sheet.check_columns(&cols, &[], false)?;
    let mut keys = KeyCheck::new();
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let model = sheet.text(line, rec, "model")?;
        let year = sheet.int(line, rec, "year")?;
        keys.insert(&sheet, line, "year", (model.clone(), year))?;
        let reference = match sheet.raw(rec, "reference") {
            "0" => false,
            "1" => true,
            other => return Err(sheet.err(line, "reference", format!("expected 0 or 1, got `{other}`"))),
        };
        out.push(EventStudyPoint {
            model,
            year,
            coef: sheet.num(line, rec, "coef")?,
            se: sheet.num(line, rec, "se")?,
            ci_lo: sheet.num(line, rec, "ci_lo")?,
            ci_hi: sheet.num(line, rec, "ci_hi")?,
            reference,
        });
    }
    Ok(out)
}
