//! The staged pipeline: payments, weights, wedge (with top-K variants),
//! decomposition, instrument, panel merge, estimates, permutation placebo
//! and offset ratios. Each stage's errors carry the stage name.

use std::collections::{BTreeMap, BTreeSet};

use lockin_core::{
    aggregate_to_cz, apply_crosswalk, build_mpw, build_predicted_wop, build_wop, centered_p_value, compute_p_new,
    compute_p_old, fips_state, fit_gravity, fit_pricing_model, lender_leaveout_payments, normalize_in_shares,
    offset_ratio, permute_wop, predict_gravity_shares, replication_seed, top_k_coverage, truncate_top_k,
    variance_decomposition, ExposureTable, LeaveOutOptions, LoanSet, VarianceDecomposition, WeightMatrix,
};
use lockin_panel::{EstimateReport, Estimator, FeOlsProblem, ModelSpec, PanelDataset, Term};

use crate::config::{ModelConfig, PanelKind, RunConfig};
use crate::error::{CliError, Result, StageContext};
use crate::ingest::Tables;
use crate::output::{
    diagnostics_csv, estimates_csv, event_study_csv, exposure_csv, placebo_csv, EstimateRow, EventStudyPoint,
};

/// How much of the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Exposures only.
    Wedge,
    /// Exposures and every configured model.
    Estimate,
    /// Exposures and the 2SLS models.
    Iv,
    /// Exposures and the permutation placebo.
    Placebo,
    /// Everything, including summary.txt.
    Report,
}

type Diagnostics = Vec<(String, String, f64)>;

fn diag(d: &mut Diagnostics, stage: &str, metric: impl Into<String>, v: f64) {
    d.push((stage.to_string(), metric.into(), v));
}

fn vintages(loans: &LoanSet, [a, b]: [i32; 2], stage: &'static str) -> Result<LoanSet> {
    let set = loans.vintages(a..=b);
    if set.is_empty() {
        return Err(CliError::Stage { stage, message: format!("no loans with vintage in {a}..={b}") });
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct ExposureStage {
    /// One row per CZ; `predicted_wop` is the instrument when configured.
    pub table: ExposureTable,
    /// (K, mpw under top-K truncated weights).
    pub top_k: Vec<(usize, BTreeMap<String, f64>)>,
    pub decomposition: Option<VarianceDecomposition>,
    pub weights: WeightMatrix,
}

/// Stages 1 to 5.
pub fn build_exposures(cfg: &RunConfig, t: &Tables, d: &mut Diagnostics) -> Result<ExposureStage> {
    let policy = cfg.run.policy()?;
    let cz_map = t.crosswalk.dominant();

    let stage = "payments";
    let pre = vintages(&t.loans, cfg.run.pre_vintages, stage)?;
    let shock = vintages(&t.loans, cfg.run.shock_vintages, stage)?;
    let new = vintages(&t.loans, cfg.run.new_vintages, stage)?;
    let model = fit_pricing_model(&new, cfg.run.penalty).stage(stage)?;
    let p_new = compute_p_new(&model, &shock, &cz_map).stage(stage)?;
    let p_old = compute_p_old(&shock, &cz_map).stage(stage)?;
    diag(d, stage, "loans_pre", pre.len() as f64);
    diag(d, stage, "loans_shock", shock.len() as f64);
    diag(d, stage, "loans_new", new.len() as f64);
    for (name, s) in model.covariate_names.iter().zip(&model.slopes) {
        diag(d, stage, format!("pricing_slope_{name}"), *s);
    }
    diag(d, stage, "unmapped_loans", p_new.diagnostics.unmapped.len() as f64);
    diag(d, stage, "unpriced_loans", p_new.diagnostics.unpriced.len() as f64);
    let (p_new, p_old) = (p_new.payments(), p_old.payments());

    let stage = "weights";
    let cz_flows = apply_crosswalk(&t.flows, &t.crosswalk);
    let weights = normalize_in_shares(&cz_flows.flows);
    if weights.is_empty() {
        return Err(CliError::Stage { stage, message: "no positive CZ-to-CZ flows after the crosswalk".into() });
    }
    diag(d, stage, "destinations", weights.len() as f64);
    diag(d, stage, "max_origins", weights.max_origins() as f64);
    diag(d, stage, "unmatched_counties", cz_flows.missing_counties.len() as f64);
    diag(d, stage, "dropped_flow_mass", cz_flows.dropped_mass);

    let stage = "wedge";
    let wop = build_wop(&weights, &p_old, policy);
    diag(d, stage, "wop_incomplete", wop.incomplete.len() as f64);
    diag(d, stage, "wop_missing", wop.missing.len() as f64);
    let mut table = build_mpw(&p_new, &wop.values);
    let mut top_k = Vec::new();
    for &k in &cfg.run.top_k {
        let wk = truncate_top_k(&weights, k).stage(stage)?;
        let wop_k = build_wop(&wk, &p_old, policy).values;
        let mpw_k: BTreeMap<String, f64> =
            p_new.iter().filter_map(|(cz, p)| wop_k.get(cz).map(|w| (cz.clone(), p - w))).collect();
        let cov = top_k_coverage(&weights, k);
        diag(d, stage, format!("top{k}_mean_coverage"), cov.values().sum::<f64>() / cov.len().max(1) as f64);
        top_k.push((k, mpw_k));
    }

    let stage = "decomposition";
    let decomposition = match variance_decomposition(&table) {
        Ok(v) => {
            diag(d, stage, "var_mpw", v.var_mpw);
            diag(d, stage, "var_p_new", v.var_pnew);
            diag(d, stage, "var_wop", v.var_wop);
            diag(d, stage, "cov_term", v.cov_term);
            diag(d, stage, "corr_p_new_wop", v.corr);
            diag(d, stage, "n", v.n as f64);
            Some(v)
        }
        Err(e) => return Err(e).stage(stage),
    };

    if let Some(inst) = &cfg.instrument {
        let stage = "instrument";
        let (Some(centroids), Some(pops)) = (&t.centroids, &t.populations) else {
            return Err(CliError::Stage { stage, message: "centroids and populations are required".into() });
        };
        let opts = LeaveOutOptions { min_out_of_state: inst.min_out_of_state, coverage_floor: inst.coverage_floor, ..Default::default() };
        let lo = lender_leaveout_payments(&pre, &shock, fips_state, opts).stage(stage)?;
        let predicted = aggregate_to_cz(&lo.predictions, &pre, &cz_map);
        let gravity = fit_gravity(&cz_flows.flows, pops, centroids).stage(stage)?;
        let shares = predict_gravity_shares(&gravity.model, pops, centroids).stage(stage)?;
        let z = build_predicted_wop(&shares, &predicted, policy);
        diag(d, stage, "leaveout_counties", lo.predictions.len() as f64);
        diag(d, stage, "leaveout_omitted", lo.omitted.len() as f64);
        diag(d, stage, "gravity_intercept", gravity.model.intercept);
        diag(d, stage, "gravity_pop_origin", gravity.model.pop_origin);
        diag(d, stage, "gravity_pop_dest", gravity.model.pop_dest);
        diag(d, stage, "gravity_distance", gravity.model.distance);
        diag(d, stage, "gravity_pairs", gravity.n_pairs as f64);
        diag(d, stage, "instrument_defined", z.values.len() as f64);
        table = table.with_instrument(&z.values);
    }
    Ok(ExposureStage { table, top_k, decomposition, weights })
}

/// Adds `mpw`, `p_new`, `wop`, `z`, `post` and `mpw_top{k}` to a panel whose
/// units are commuting zones. Zones without a value get NaN.
pub fn attach_exposures(data: &PanelDataset, ex: &ExposureStage, post_start: i32) -> lockin_panel::Result<PanelDataset> {
    let by_unit = |m: &BTreeMap<String, f64>| -> Vec<f64> {
        data.units().iter().map(|u| m.get(u).copied().unwrap_or(f64::NAN)).collect()
    };
    let t = &ex.table;
    let mut out = data.clone();
    out.set_column("mpw", by_unit(&t.column(|r| r.mpw)))?;
    out.set_column("p_new", by_unit(&t.column(|r| r.p_new)))?;
    out.set_column("wop", by_unit(&t.column(|r| r.wop)))?;
    out.set_column("z", by_unit(&t.column(|r| r.predicted_wop)))?;
    out.set_column("post", data.periods().iter().map(|&y| f64::from(u8::from(y >= post_start))).collect())?;
    for (k, m) in &ex.top_k {
        out.set_column(&format!("mpw_top{k}"), by_unit(m))?;
    }
    Ok(out)
}

fn term_columns(t: &Term, out: &mut BTreeSet<String>) {
    for f in t.factors() {
        if let lockin_panel::Factor::Column(c) = f {
            out.insert(c.clone());
        }
    }
}

/// Rows where every numeric column the model reads is finite.
pub fn complete_cases(data: &PanelDataset, spec: &ModelSpec) -> lockin_panel::Result<PanelDataset> {
    let mut cols = BTreeSet::from([spec.outcome.clone()]);
    for t in spec.regressors.iter().chain(&spec.endogenous).chain(&spec.instrument) {
        term_columns(t, &mut cols);
    }
    cols.extend(spec.offset.iter().cloned());
    let mut keep = vec![true; data.len()];
    for c in &cols {
        let v = data.column(c)?;
        keep.iter_mut().zip(v.iter()).for_each(|(k, x)| *k &= x.is_finite());
    }
    if keep.iter().all(|k| *k) {
        return Ok(data.clone());
    }
    data.select(&keep)
}

/// The coefficient a model is summarized by: the first regressor that
/// involves `mpw`, else the first regressor.
pub fn headline(report: &EstimateReport) -> Option<(String, f64, f64)> {
    let idx = report
        .names
        .iter()
        .position(|n| Term::parse(n).is_ok_and(|t| t.uses_column("mpw")))
        .or((!report.names.is_empty()).then_some(0))?;
    Some((report.names[idx].clone(), report.coef[idx], report.se[idx]))
}

#[derive(Debug, Clone)]
pub struct ModelResult {
    pub name: String,
    pub estimator: Estimator,
    pub report: EstimateReport,
    /// Event-study points, reference year included.
    pub event: Vec<EventStudyPoint>,
}

fn spec_with_column(spec: &ModelSpec, from: &str, to: &str) -> ModelSpec {
    let mut s = spec.clone();
    s.regressors = s.regressors.iter().map(|t| t.replace_column(from, to)).collect();
    s.endogenous = s.endogenous.as_ref().map(|t| t.replace_column(from, to));
    s.instrument = s.instrument.as_ref().map(|t| t.replace_column(from, to));
    s
}

fn distinct_periods(data: &PanelDataset) -> Vec<i32> {
    let set: BTreeSet<i32> = data.periods().iter().copied().collect();
    set.into_iter().collect()
}

/// Fits one configured model (and its top-K variants).
pub fn fit_model(m: &ModelConfig, data: &PanelDataset, cfg: &RunConfig, top_k: &[usize]) -> Result<Vec<ModelResult>> {
    let stage = "estimates";
    let periods = distinct_periods(data);
    let spec = m.to_spec(&periods, cfg.run.reference_year)?;
    let fit = |name: String, spec: &ModelSpec| -> Result<ModelResult> {
        let sample = complete_cases(data, spec).map_err(|e| CliError::Stage { stage, message: format!("{name}: {e}") })?;
        let report = lockin_panel::fit(spec, &sample).map_err(|e| CliError::Stage { stage, message: format!("{name}: {e}") })?;
        let mut event = Vec::new();
        if m.is_event_study() {
            let exposure = m.exposure.as_deref().unwrap_or("mpw");
            for &y in &periods {
                if y == cfg.run.reference_year {
                    event.push(EventStudyPoint::reference(&name, y));
                } else {
                    let term = format!("{exposure}*period={y}");
                    let i = report.index_of(&term).map_err(|e| CliError::Stage { stage, message: e.to_string() })?;
                    event.push(EventStudyPoint::new(&name, y, report.coef[i], report.se[i]));
                }
            }
        }
        Ok(ModelResult { name, estimator: spec.estimator, report, event })
    };
    let mut out = vec![fit(m.name.clone(), &spec)?];
    if m.top_k {
        for k in top_k {
            out.push(fit(format!("{}_top{k}", m.name), &spec_with_column(&spec, "mpw", &format!("mpw_top{k}")))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PlaceboResult {
    pub model: String,
    pub term: String,
    pub actual: f64,
    pub seeds: Vec<u64>,
    pub coefs: Vec<f64>,
    pub p_value: f64,
}

/// Permutation placebo: WOP is shuffled across zones (P^new held fixed), the
/// exposure term rebuilt from the permuted wedge and the model refit.
/// Replication r uses `replication_seed(seed, r)`.
pub fn run_placebo(cfg: &RunConfig, ex: &ExposureStage, panels: &Panels) -> Result<Option<PlaceboResult>> {
    let stage = "placebo";
    let Some(pc) = &cfg.placebo else { return Ok(None) };
    let m = cfg
        .models
        .iter()
        .find(|m| m.name == pc.model)
        .ok_or_else(|| CliError::Config(format!("placebo model `{}` is not defined", pc.model)))?;
    let data = panels.get(m.panel).ok_or_else(|| CliError::Config(format!("placebo model `{}` has no panel", m.name)))?;
    let spec = m.to_spec(&distinct_periods(data), cfg.run.reference_year)?;
    if spec.estimator != Estimator::FeOls {
        return Err(CliError::Config(format!("placebo model `{}` must be fe_ols", m.name)));
    }
    let names = spec.regressor_names();
    let j = match &pc.term {
        Some(t) => names.iter().position(|n| n == t),
        None => spec.regressors.iter().position(|t| t.uses_column("mpw")),
    }
    .ok_or_else(|| CliError::Config(format!("placebo model `{}` has no term to permute", m.name)))?;
    let term = spec.regressors[j].clone();

    let sample = complete_cases(data, &spec).and_then(|d| spec.sample(&d)).stage(stage)?;
    let problem = FeOlsProblem::new(&spec, &sample).stage(stage)?;
    let actual = problem.fit().stage(stage)?.coef[j];
    let mut scratch = sample.clone();
    let (mut seeds, mut coefs) = (Vec::with_capacity(pc.replications), Vec::with_capacity(pc.replications));
    for r in 0..pc.replications {
        let seed = replication_seed(pc.seed, r as u64);
        let permuted = permute_wop(&ex.table, seed).column(|row| row.mpw);
        let mpw: Vec<f64> = sample.units().iter().map(|u| permuted.get(u).copied().unwrap_or(f64::NAN)).collect();
        scratch.set_column("mpw", mpw).stage(stage)?;
        let raw = scratch.term(&term).stage(stage)?;
        coefs.push(problem.coef_with_column(j, &raw).stage(stage)?);
        seeds.push(seed);
    }
    let p_value = centered_p_value(actual, &coefs).stage(stage)?;
    Ok(Some(PlaceboResult { model: m.name.clone(), term: term.to_string(), actual, seeds, coefs, p_value }))
}

/// Panels with exposures attached.
#[derive(Debug, Clone, Default)]
pub struct Panels {
    pub cz: Option<PanelDataset>,
    pub soc: Option<PanelDataset>,
}

impl Panels {
    pub fn get(&self, kind: PanelKind) -> Option<&PanelDataset> {
        match kind {
            PanelKind::Cz => self.cz.as_ref(),
            PanelKind::Soc => self.soc.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OffsetResult {
    pub theta_model: String,
    pub beta: f64,
    pub theta: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub exposures: ExposureStage,
    pub models: Vec<ModelResult>,
    /// Models skipped because their panel was not supplied.
    pub skipped: Vec<String>,
    pub placebo: Option<PlaceboResult>,
    pub offsets: Vec<OffsetResult>,
    pub diagnostics: Diagnostics,
    pub summaries: Vec<String>,
}

pub fn run_pipeline(cfg: &RunConfig, t: &Tables, scope: Scope) -> Result<RunOutput> {
    let mut d = Diagnostics::new();
    let exposures = build_exposures(cfg, t, &mut d)?;

    let stage = "merge";
    let post = cfg.run.post_start;
    let panels = Panels {
        cz: t.panel.as_ref().map(|p| attach_exposures(p, &exposures, post)).transpose().stage(stage)?,
        soc: t.soc_panel.as_ref().map(|p| attach_exposures(p, &exposures, post)).transpose().stage(stage)?,
    };

    let mut models = Vec::new();
    let mut skipped = Vec::new();
    if matches!(scope, Scope::Estimate | Scope::Iv | Scope::Report) {
        for m in &cfg.models {
            if scope == Scope::Iv && m.estimator != "tsls" {
                continue;
            }
            let Some(data) = panels.get(m.panel) else {
                if cfg.defaulted_models {
                    skipped.push(m.name.clone());
                    continue;
                }
                return Err(CliError::Config(format!("model `{}` needs the {:?} panel, which is not configured", m.name, m.panel)));
            };
            models.extend(fit_model(m, data, cfg, &cfg.run.top_k)?);
        }
        if scope == Scope::Iv && models.is_empty() {
            return Err(CliError::Config("no tsls model to fit".into()));
        }
        for r in &models {
            let stage = "estimates";
            diag(&mut d, stage, format!("{}/n_obs", r.name), r.report.n_obs as f64);
            if let Some(g) = r.report.n_clusters {
                diag(&mut d, stage, format!("{}/n_clusters", r.name), g as f64);
            }
            if let Some(fs) = &r.report.first_stage {
                diag(&mut d, stage, format!("{}/first_stage_coef", r.name), fs.coef);
                diag(&mut d, stage, format!("{}/first_stage_f", r.name), fs.f_stat);
            }
            if let Some(c) = &r.report.convergence {
                diag(&mut d, stage, format!("{}/iterations", r.name), c.iterations as f64);
                if let Some(a) = c.dispersion {
                    diag(&mut d, stage, format!("{}/dispersion", r.name), a);
                }
            }
            if r.report.dropped > 0 {
                diag(&mut d, stage, format!("{}/dropped", r.name), r.report.dropped as f64);
            }
        }
    }

    let placebo = if matches!(scope, Scope::Placebo | Scope::Report) {
        if scope == Scope::Placebo && cfg.placebo.is_none() {
            return Err(CliError::Config("no [placebo] section".into()));
        }
        run_placebo(cfg, &exposures, &panels)?
    } else {
        None
    };

    let mut offsets = Vec::new();
    if scope == Scope::Report {
        let stage = "offset";
        let find = |name: &str| models.iter().find(|r| r.name == name).and_then(|r| headline(&r.report));
        if let Some((_, beta, _)) = find(&cfg.offset.beta_model) {
            for tm in &cfg.offset.theta_models {
                if let Some((_, theta, _)) = find(tm) {
                    let ratio = offset_ratio(beta, theta, cfg.offset.e_bar).stage(stage)?;
                    offsets.push(OffsetResult { theta_model: tm.clone(), beta, theta, ratio });
                }
            }
        }
    }
    Ok(RunOutput {
        exposures,
        models,
        skipped,
        placebo,
        offsets,
        diagnostics: d,
        summaries: t.summaries.iter().map(ToString::to_string).collect(),
    })
}

impl RunOutput {
    pub fn estimate_rows(&self) -> Vec<EstimateRow> {
        let mut rows = Vec::new();
        for m in &self.models {
            let r = &m.report;
            for i in 0..r.names.len() {
                rows.push(EstimateRow {
                    model: m.name.clone(),
                    term: r.names[i].clone(),
                    coef: r.coef[i],
                    se: r.se[i],
                    t: r.t[i],
                    p: r.p[i],
                    n_obs: r.n_obs,
                });
            }
        }
        rows
    }

    pub fn event_points(&self) -> Vec<EventStudyPoint> {
        self.models.iter().flat_map(|m| m.event.iter().cloned()).collect()
    }

    /// The files this run emits, as (name, contents).
    pub fn files(&self, scope: Scope, cfg: &RunConfig) -> Vec<(String, String)> {
        let mut files = vec![
            ("exposure.csv".to_string(), exposure_csv(&self.exposures.table, &self.exposures.top_k)),
            ("diagnostics.csv".to_string(), diagnostics_csv(&self.diagnostics)),
        ];
        if matches!(scope, Scope::Estimate | Scope::Iv | Scope::Report) {
            files.push(("estimates.csv".into(), estimates_csv(&self.estimate_rows())));
            let points = self.event_points();
            if !points.is_empty() {
                files.push(("eventstudy.csv".into(), event_study_csv(&points)));
            }
        }
        if let Some(p) = &self.placebo {
            files.push(("placebo.csv".into(), placebo_csv(&p.seeds, &p.coefs)));
        }
        if scope == Scope::Report {
            files.push(("summary.txt".into(), self.summary_text(cfg)));
        }
        files
    }

    pub fn summary_text(&self, cfg: &RunConfig) -> String {
        use crate::format::sig10;
        let mut s = String::new();
        let mut line = |l: String| {
            s.push_str(&l);
            s.push('\n');
        };
        line("inputs".into());
        for t in &self.summaries {
            line(format!("  {t}"));
        }
        let ex = &self.exposures;
        let defined = ex.table.rows().iter().filter(|r| r.mpw.is_some()).count();
        line(format!("exposures: {} zones, {defined} with a wedge", ex.table.len()));
        if let Some(v) = &ex.decomposition {
            line(format!(
                "  var(mpw) = {} = var(p_new) {} + var(wop) {} + cov term {}; corr(p_new, wop) = {}",
                sig10(v.var_mpw),
                sig10(v.var_pnew),
                sig10(v.var_wop),
                sig10(v.cov_term),
                sig10(v.corr)
            ));
        }
        if !self.models.is_empty() {
            line("estimates".into());
        }
        for m in &self.models {
            if let Some((term, b, se)) = headline(&m.report) {
                line(format!("  {}: {term} = {} (se {}), n = {}", m.name, sig10(b), sig10(se), m.report.n_obs));
            }
            if let Some(fs) = &m.report.first_stage {
                line(format!("    first-stage F = {}", sig10(fs.f_stat)));
            }
        }
        if !self.skipped.is_empty() {
            line(format!("  skipped (panel not supplied): {}", self.skipped.join(", ")));
        }
        if let Some(p) = &self.placebo {
            line(format!(
                "placebo: {} {} actual = {}, R = {}, centered p = {}",
                p.model,
                p.term,
                sig10(p.actual),
                p.coefs.len(),
                sig10(p.p_value)
            ));
        }
        for o in &self.offsets {
            line(format!(
                "offset ratio ({} / {}): {} x {} / |{}| = {}",
                o.theta_model,
                cfg.offset.beta_model,
                sig10(cfg.offset.e_bar),
                sig10(o.theta),
                sig10(o.beta),
                sig10(o.ratio)
            ));
        }
        s
    }
}
