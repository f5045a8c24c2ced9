//! Emitted tables and the staged write of a run's artifact directory.

use std::fs;
use std::path::Path;

use lockin_core::ExposureTable;

use crate::error::{CliError, Result};
use crate::format::{sig10, sig10_opt};

/// Every file a run may produce. Stale copies are removed before a new run's
/// outputs are moved in, so a run without a placebo leaves no placebo.csv.
pub const OUTPUT_FILES: [&str; 6] =
    ["estimates.csv", "diagnostics.csv", "exposure.csv", "placebo.csv", "eventstudy.csv", "summary.txt"];

/// One point of an event-study plot. The reference year has coefficient and
/// standard error zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStudyPoint {
    pub model: String,
    pub year: i32,
    pub coef: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reference: bool,
}

impl EventStudyPoint {
    pub fn new(model: &str, year: i32, coef: f64, se: f64) -> Self {
        Self { model: model.to_string(), year, coef, se, ci_lo: coef - 1.96 * se, ci_hi: coef + 1.96 * se, reference: false }
    }

    pub fn reference(model: &str, year: i32) -> Self {
        Self { reference: true, ..Self::new(model, year, 0.0, 0.0) }
    }
}

/// A row of estimates.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub model: String,
    pub term: String,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub n_obs: usize,
}

/// Builds a CSV document in memory.
pub(crate) struct CsvDoc {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvDoc {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn finish(self) -> String {
        let bytes = self.writer.into_inner().expect("in-memory flush");
        String::from_utf8(bytes).expect("fields are UTF-8")
    }
}

pub fn estimates_csv(rows: &[EstimateRow]) -> String {
    let mut doc = CsvDoc::new(&["model", "term", "coef", "se", "t", "p", "n_obs"]);
    for r in rows {
        doc.row([r.model.clone(), r.term.clone(), sig10(r.coef), sig10(r.se), sig10(r.t), sig10(r.p), r.n_obs.to_string()]);
    }
    doc.finish()
}

pub fn event_study_csv(points: &[EventStudyPoint]) -> String {
    let mut doc = CsvDoc::new(&["model", "year", "coef", "se", "ci_lo", "ci_hi", "reference"]);
    for p in points {
        doc.row([
            p.model.clone(),
            p.year.to_string(),
            sig10(p.coef),
            sig10(p.se),
            sig10(p.ci_lo),
            sig10(p.ci_hi),
            u8::from(p.reference).to_string(),
        ]);
    }
    doc.finish()
}

/// cz, p_new, wop, mpw, predicted_wop, then one column per top-K level.
pub fn exposure_csv(table: &ExposureTable, top_k: &[(usize, std::collections::BTreeMap<String, f64>)]) -> String {
    let mut header = vec!["cz".to_string(), "p_new".into(), "wop".into(), "mpw".into(), "predicted_wop".into()];
    header.extend(top_k.iter().map(|(k, _)| format!("mpw_top{k}")));
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut doc = CsvDoc::new(&refs);
    for r in table.rows() {
        let mut fields = vec![r.cz.clone(), sig10_opt(r.p_new), sig10_opt(r.wop), sig10_opt(r.mpw), sig10_opt(r.predicted_wop)];
        fields.extend(top_k.iter().map(|(_, m)| sig10_opt(m.get(&r.cz).copied())));
        doc.row(fields);
    }
    doc.finish()
}

pub fn diagnostics_csv(rows: &[(String, String, f64)]) -> String {
    let mut doc = CsvDoc::new(&["stage", "metric", "value"]);
    for (stage, metric, v) in rows {
        doc.row([stage.clone(), metric.clone(), sig10(*v)]);
    }
    doc.finish()
}

pub fn placebo_csv(seeds: &[u64], coefs: &[f64]) -> String {
    let mut doc = CsvDoc::new(&["replication", "seed", "coef"]);
    for (r, (s, c)) in seeds.iter().zip(coefs).enumerate() {
        doc.row([r.to_string(), s.to_string(), sig10(*c)]);
    }
    doc.finish()
}

/// Writes `files` into `dir`. Files go to a staging directory first and are
/// moved in only when all of them were written; on failure the staging
/// directory is removed and `dir` keeps its previous contents.
pub fn write_artifacts(dir: &Path, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let staging = dir.join(".lockin-partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| CliError::io(&staging, e))?;
    let staged = files.iter().try_for_each(|(name, body)| {
        let p = staging.join(name);
        fs::write(&p, body).map_err(|e| CliError::io(p, e))
    });
    if let Err(e) = staged {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    for name in OUTPUT_FILES {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| CliError::io(p, e))?;
        }
    }
    for (name, _) in files {
        let (from, to) = (staging.join(name), dir.join(name));
        fs::rename(&from, &to).map_err(|e| CliError::io(to, e))?;
    }
    fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))
}
