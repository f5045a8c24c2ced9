//! Writing a synthetic world as the pipeline's CSV inputs, and handing one
//! to the pipeline directly.

use std::fs;
use std::path::Path;

use lockin_dgp::SyntheticWorld;
use lockin_panel::PanelDataset;

use crate::error::{CliError, Result};
use crate::ingest::Tables;
use crate::output::CsvDoc;

/// The world as pipeline inputs, without a round trip through disk.
pub fn tables_from_world(w: &SyntheticWorld) -> Result<Tables> {
    Ok(Tables {
        loans: w.loans.clone(),
        flows: w.county_flows.clone(),
        crosswalk: w.crosswalk().map_err(|e| CliError::Config(e.to_string()))?,
        centroids: Some(w.centroids.clone()),
        populations: Some(w.populations.clone()),
        panel: Some(w.panel.clone()),
        soc_panel: Some(w.soc_panel.clone()),
        summaries: Vec::new(),
    })
}

/// Shortest representation that parses back to the same value.
fn full(x: f64) -> String {
    format!("{x}")
}

fn panel_csv(d: &PanelDataset, skip: &[&str]) -> String {
    let cols: Vec<&str> = d.column_names().filter(|c| !skip.contains(c)).collect();
    let mut header = vec!["unit", "period"];
    if d.groups().is_some() {
        header.push("group");
    }
    header.push("cluster");
    header.extend(&cols);
    let mut doc = CsvDoc::new(&header);
    let values: Vec<_> = cols.iter().map(|c| d.column(c).expect("listed column")).collect();
    for i in 0..d.len() {
        let mut row = vec![d.units()[i].clone(), d.periods()[i].to_string()];
        if let Some(g) = d.groups() {
            row.push(g[i].clone());
        }
        row.push(d.clusters()[i].clone());
        row.extend(values.iter().map(|v| full(v[i])));
        doc.row(row);
    }
    doc.finish()
}

/// Run config pointing at the files written by [`write_world`], with the
/// instrument, top-K variants and a placebo enabled and the default models.
pub fn run_config_toml(w: &SyntheticWorld) -> String {
    format!(
        "[inputs]\n\
         loans = \"loans.csv\"\n\
         flows = \"flows.csv\"\n\
         crosswalk = \"crosswalk.csv\"\n\
         centroids = \"centroids.csv\"\n\
         panel = \"panel.csv\"\n\
         soc_panel = \"soc_panel.csv\"\n\
         bartik = \"bartik.csv\"\n\
         \n\
         [run]\n\
         post_start = {}\n\
         reference_year = 2019\n\
         top_k = [1, 3, 5, 10, 20]\n\
         penalty = 1.0\n\
         missing_origin = \"drop\"\n\
         \n\
         [instrument]\n\
         min_out_of_state = 50\n\
         coverage_floor = 0.7\n\
         \n\
         [placebo]\n\
         replications = 999\n\
         seed = {}\n\
         model = \"did\"\n\
         \n\
         [offset]\n\
         beta_model = \"did\"\n\
         theta_models = [\"h1b\"]\n\
         e_bar = 0.45\n",
        w.config.post_start, w.config.master_seed
    )
}

/// Writes loans, flows, crosswalk, centroids, panel, soc_panel, bartik,
/// truth, true_exposure and a run config (`lockin.toml`) into `dir`.
/// Returns the file names written.
pub fn write_world(w: &SyntheticWorld, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files: Vec<(&str, String)> = Vec::new();

    let mut header = vec!["loan_id", "county", "lender", "vintage_year", "annual_rate", "principal"];
    header.extend(w.loans.covariate_names().iter().map(String::as_str));
    let mut doc = CsvDoc::new(&header);
    for l in w.loans.loans() {
        let mut row = vec![
            l.loan_id.clone(),
            l.county.clone(),
            l.lender.clone(),
            l.vintage_year.to_string(),
            full(l.annual_rate),
            full(l.principal),
        ];
        row.extend(l.covariates.iter().map(|x| full(*x)));
        doc.row(row);
    }
    files.push(("loans.csv", doc.finish()));

    let mut doc = CsvDoc::new(&["origin", "destination", "count"]);
    for (o, d, c) in w.county_flows.iter() {
        doc.row([o.to_string(), d.to_string(), full(c)]);
    }
    files.push(("flows.csv", doc.finish()));

    let mut doc = CsvDoc::new(&["county", "cz", "weight"]);
    for (county, cz, wt) in &w.crosswalk_rows {
        doc.row([county.clone(), cz.clone(), full(*wt)]);
    }
    files.push(("crosswalk.csv", doc.finish()));

    let mut doc = CsvDoc::new(&["cz", "latitude", "longitude", "population"]);
    for (cz, c) in &w.centroids {
        doc.row([cz.clone(), full(c.latitude), full(c.longitude), full(w.populations[cz])]);
    }
    files.push(("centroids.csv", doc.finish()));

    files.push(("panel.csv", panel_csv(&w.panel, &[])));
    files.push(("soc_panel.csv", panel_csv(&w.soc_panel, &["b"])));

    let mut doc = CsvDoc::new(&["cz", "soc", "year", "b"]);
    for c in w.bartik_cells() {
        doc.row([c.cz.clone(), c.soc.clone(), c.year.to_string(), full(c.b)]);
    }
    files.push(("bartik.csv", doc.finish()));

    let t = &w.truth;
    let mut doc = CsvDoc::new(&["parameter", "value"]);
    let params = [
        ("beta_migration", t.beta_migration),
        ("theta_h1b", t.theta_h1b),
        ("triple", t.triple),
        ("gravity_intercept", t.gravity[0]),
        ("gravity_pop_origin", t.gravity[1]),
        ("gravity_pop_dest", t.gravity[2]),
        ("gravity_distance", t.gravity[3]),
        ("dispersion", t.dispersion),
        ("endogeneity", t.endogeneity),
    ];
    for (k, v) in params {
        doc.row([k.to_string(), full(v)]);
    }
    doc.row(["master_seed".to_string(), w.config.master_seed.to_string()]);
    files.push(("truth.csv", doc.finish()));

    let mut doc = CsvDoc::new(&["cz", "p_new", "wop", "mpw"]);
    for (cz, e) in &w.exposures {
        doc.row([cz.clone(), full(e.p_new), full(e.wop), full(e.mpw)]);
    }
    files.push(("true_exposure.csv", doc.finish()));

    files.push(("lockin.toml", run_config_toml(w)));

    let mut names = Vec::with_capacity(files.len());
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| CliError::io(p, e))?;
        names.push(name.to_string());
    }
    Ok(names)
}
