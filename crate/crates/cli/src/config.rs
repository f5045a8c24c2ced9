//! TOML run configuration.
//!
//! ```toml
//! [inputs]
//! loans = "loans.csv"
//! flows = "flows.csv"
//! crosswalk = "crosswalk.csv"
//! centroids = "centroids.csv"
//! panel = "panel.csv"
//! soc_panel = "soc_panel.csv"
//! bartik = "bartik.csv"
//!
//! [run]
//! post_start = 2022
//! reference_year = 2019
//! top_k = [1, 3, 5, 10, 20]
//!
//! [instrument]
//!
//! [placebo]
//! replications = 999
//! seed = 7
//!
//! [[model]]
//! name = "did"
//! outcome = "y_mig"
//! regressors = ["mpw*post", "ctrl"]
//! ```
//!
//! Relative paths resolve against the directory of the config file. When no
//! `[[model]]` is given, [`default_models`] is used.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lockin_core::{MissingOriginPolicy, DEFAULT_E_BAR};
use lockin_panel::{Estimator, FeSet, ModelSpec, Term, Transform, VcovKind};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    #[serde(default)]
    pub run: RunSection,
    pub instrument: Option<InstrumentSection>,
    pub placebo: Option<PlaceboSection>,
    #[serde(default)]
    pub offset: OffsetSection,
    #[serde(default, rename = "model")]
    pub models: Vec<ModelConfig>,
    /// Set when `models` came from [`default_models`]; models whose panel is
    /// missing are then skipped instead of rejected.
    #[serde(skip)]
    pub defaulted_models: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub loans: PathBuf,
    pub flows: PathBuf,
    pub crosswalk: PathBuf,
    /// CZ centroids and populations; required by the instrument.
    pub centroids: Option<PathBuf>,
    /// CZ-year outcome panel.
    pub panel: Option<PathBuf>,
    /// CZ-SOC-year outcome panel.
    pub soc_panel: Option<PathBuf>,
    /// Bartik shocks merged into the SOC panel as column `b`.
    pub bartik: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub post_start: i32,
    pub reference_year: i32,
    /// Truncation levels for the top-K wedge variants.
    pub top_k: Vec<usize>,
    /// Ridge penalty of the 2024 pricing model (standardized slopes).
    pub penalty: f64,
    /// `drop` (renormalize over origins with payments) or `missing`.
    pub missing_origin: String,
    pub output_dir: Option<PathBuf>,
    /// Inclusive vintage ranges.
    pub pre_vintages: [i32; 2],
    pub shock_vintages: [i32; 2],
    pub new_vintages: [i32; 2],
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            post_start: 2022,
            reference_year: 2019,
            top_k: Vec::new(),
            penalty: 1.0,
            missing_origin: "drop".to_string(),
            output_dir: None,
            pre_vintages: [2018, 2019],
            shock_vintages: [2020, 2021],
            new_vintages: [2024, 2024],
        }
    }
}

impl RunSection {
    pub fn policy(&self) -> Result<MissingOriginPolicy> {
        self.missing_origin.parse().map_err(|e: lockin_core::CoreError| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstrumentSection {
    /// Out-of-state loans a lender needs for a leave-out position.
    pub min_out_of_state: usize,
    /// Share of a county's pre-period lending that must be covered.
    pub coverage_floor: f64,
}

impl Default for InstrumentSection {
    fn default() -> Self {
        Self { min_out_of_state: 50, coverage_floor: 0.70 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboSection {
    pub replications: usize,
    pub seed: u64,
    /// Model whose exposure coefficient is permuted; must be `fe_ols`.
    pub model: String,
    /// Regressor to permute; defaults to the first one using `mpw`.
    pub term: Option<String>,
}

impl Default for PlaceboSection {
    fn default() -> Self {
        Self { replications: 999, seed: 20240601, model: "did".to_string(), term: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetSection {
    pub beta_model: String,
    pub theta_models: Vec<String>,
    pub e_bar: f64,
}

impl Default for OffsetSection {
    fn default() -> Self {
        Self { beta_model: "did".to_string(), theta_models: vec!["h1b".to_string()], e_bar: DEFAULT_E_BAR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PanelKind {
    #[default]
    Cz,
    Soc,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// `fe_ols`, `tsls`, `negbin`, `long_diff` or `event_study`.
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default)]
    pub panel: PanelKind,
    pub outcome: String,
    /// Included regressors; controls for `tsls` and `event_study`.
    #[serde(default)]
    pub regressors: Vec<String>,
    /// Fixed-effect sets such as `unit` or `unit^period`.
    pub fe: Option<Vec<String>>,
    pub cluster: Option<String>,
    /// `cluster`, `hc1` or `model`.
    pub vcov: Option<String>,
    pub transform: Option<String>,
    pub endogenous: Option<String>,
    pub instrument: Option<String>,
    pub offset: Option<String>,
    /// (year0, year1) for `long_diff`.
    pub years: Option<[i32; 2]>,
    /// Exposure column interacted with year indicators in `event_study`.
    pub exposure: Option<String>,
    #[serde(default)]
    pub exclude: BTreeMap<String, Vec<String>>,
    /// Also fit the model with `mpw` replaced by each top-K variant.
    #[serde(default)]
    pub top_k: bool,
}

fn default_estimator() -> String {
    "fe_ols".to_string()
}

impl ModelConfig {
    fn base(name: &str, estimator: &str, outcome: &str, regressors: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            estimator: estimator.to_string(),
            panel: PanelKind::Cz,
            outcome: outcome.to_string(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            fe: None,
            cluster: None,
            vcov: None,
            transform: None,
            endogenous: None,
            instrument: None,
            offset: None,
            years: None,
            exposure: None,
            exclude: BTreeMap::new(),
            top_k: false,
        }
    }

    pub fn is_event_study(&self) -> bool {
        self.estimator == "event_study"
    }

    /// The estimator spec. Event studies need the panel's periods and the
    /// reference year to expand their indicator terms.
    pub fn to_spec(&self, periods: &[i32], reference_year: i32) -> Result<ModelSpec> {
        let bad = |msg: String| CliError::Config(format!("model `{}`: {msg}", self.name));
        let strs: Vec<&str> = self.regressors.iter().map(String::as_str).collect();
        let mut spec = match self.estimator.as_str() {
            "fe_ols" => ModelSpec::fe_ols(&self.outcome, &strs),
            "event_study" => {
                let exposure = self.exposure.as_deref().unwrap_or("mpw");
                let mut terms: Vec<String> = lockin_panel::event_study_terms(exposure, periods, reference_year)
                    .map_err(|e| bad(e.to_string()))?
                    .into_iter()
                    .map(|(_, t)| t.to_string())
                    .collect();
                terms.extend(self.regressors.iter().cloned());
                let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
                ModelSpec::fe_ols(&self.outcome, &refs)
            }
            "tsls" => {
                let (Some(en), Some(inst)) = (&self.endogenous, &self.instrument) else {
                    return Err(bad("tsls needs `endogenous` and `instrument`".into()));
                };
                ModelSpec::tsls(&self.outcome, en, inst, &strs)
            }
            "negbin" => {
                let Some(off) = &self.offset else {
                    return Err(bad("negbin needs `offset`".into()));
                };
                ModelSpec::negbin(&self.outcome, &strs, off)
            }
            "long_diff" => {
                let Some([y0, y1]) = self.years else {
                    return Err(bad("long_diff needs `years = [year0, year1]`".into()));
                };
                ModelSpec::long_diff(&self.outcome, &strs, y0, y1)
            }
            other => return Err(bad(format!("unknown estimator `{other}`"))),
        }
        .map_err(|e| bad(e.to_string()))?;
        if let Some(fe) = &self.fe {
            spec.fe = fe.iter().map(|s| FeSet::parse(s)).collect::<lockin_panel::Result<_>>().map_err(|e| bad(e.to_string()))?;
        }
        if let Some(c) = &self.cluster {
            spec.cluster = c.clone();
        }
        if let Some(v) = &self.vcov {
            spec.vcov = match v.as_str() {
                "cluster" => VcovKind::Cluster,
                "hc1" => VcovKind::Hc1,
                "model" => VcovKind::Model,
                other => return Err(bad(format!("unknown vcov `{other}`"))),
            };
        }
        if let Some(t) = &self.transform {
            spec.transform = t.parse::<Transform>().map_err(bad)?;
        }
        spec.exclude = self.exclude.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        if spec.estimator == Estimator::Tsls && self.fe.is_none() {
            spec.fe = vec![FeSet::single("unit"), FeSet::single("period")];
        }
        spec.validate().map_err(|e| bad(e.to_string()))?;
        Ok(spec)
    }

    /// Regressor terms, parsed; used to check which columns a model reads.
    pub fn terms(&self) -> Result<Vec<Term>> {
        self.regressors
            .iter()
            .map(|r| Term::parse(r).map_err(|e| CliError::Config(format!("model `{}`: {e}", self.name))))
            .collect()
    }
}

/// The standard set of estimates: baseline DiD, wedge components, event
/// study, H-1B rate and count models, long difference, the triple
/// interaction and (with an instrument) 2SLS. Models whose panel is not
/// configured are skipped by the pipeline.
pub fn default_models(with_instrument: bool) -> Vec<ModelConfig> {
    let mut did = ModelConfig::base("did", "fe_ols", "y_mig", &["mpw*post", "ctrl"]);
    did.top_k = true;
    let components = ModelConfig::base("components", "fe_ols", "y_mig", &["p_new*post", "wop*post", "ctrl"]);
    let mut event = ModelConfig::base("event", "event_study", "y_mig", &["ctrl"]);
    event.exposure = Some("mpw".to_string());
    let h1b = ModelConfig::base("h1b", "fe_ols", "h1b_rate", &["mpw*post"]);
    let mut h1b_nb = ModelConfig::base("h1b_nb", "negbin", "h1b_count", &["mpw*post"]);
    h1b_nb.offset = Some("log_emp".to_string());
    let mut long = ModelConfig::base("long_diff", "long_diff", "y_mig", &["mpw"]);
    long.years = Some([2019, 2024]);
    let mut triple = ModelConfig::base("triple", "fe_ols", "h1b_soc", &["mpw*post*b", "mpw*b", "post*b", "b"]);
    triple.panel = PanelKind::Soc;
    triple.fe = Some(vec!["unit^period".into(), "unit^group".into(), "group^period".into()]);
    let mut models = vec![did, components, event, h1b, h1b_nb, long, triple];
    if with_instrument {
        let mut iv = ModelConfig::base("iv", "tsls", "y_mig", &["p_new*post", "ctrl"]);
        iv.endogenous = Some("wop*post".to_string());
        iv.instrument = Some("z*post".to_string());
        models.push(iv);
    }
    models
}

/// Values given on the command line; each one overrides the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub top_k: Option<Vec<usize>>,
    pub penalty: Option<f64>,
    pub post_start: Option<i32>,
    pub reference_year: Option<i32>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        if cfg.models.is_empty() {
            cfg.models = default_models(cfg.instrument.is_some());
            cfg.defaulted_models = true;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.loans, &mut i.flows, &mut i.crosswalk] {
            fix(p);
        }
        for p in [&mut i.centroids, &mut i.panel, &mut i.soc_panel, &mut i.bartik].into_iter().flatten() {
            fix(p);
        }
        if let Some(p) = &mut self.run.output_dir {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.output_dir {
            self.run.output_dir = Some(d.clone());
        }
        if let Some(k) = &o.top_k {
            self.run.top_k = k.clone();
        }
        if let Some(p) = o.penalty {
            self.run.penalty = p;
        }
        if let Some(y) = o.post_start {
            self.run.post_start = y;
        }
        if let Some(y) = o.reference_year {
            self.run.reference_year = y;
        }
        if o.replications.is_some() || o.seed.is_some() {
            let p = self.placebo.get_or_insert_with(PlaceboSection::default);
            if let Some(r) = o.replications {
                p.replications = r;
            }
            if let Some(s) = o.seed {
                p.seed = s;
            }
        }
    }

    /// Checks that referenced files exist and that settings are coherent.
    pub fn validate(&self) -> Result<()> {
        let i = &self.inputs;
        let required = [("loans", Some(&i.loans)), ("flows", Some(&i.flows)), ("crosswalk", Some(&i.crosswalk))];
        let optional = [
            ("centroids", i.centroids.as_ref()),
            ("panel", i.panel.as_ref()),
            ("soc_panel", i.soc_panel.as_ref()),
            ("bartik", i.bartik.as_ref()),
        ];
        for (name, p) in required.into_iter().chain(optional) {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::Config(format!("input `{name}` not found: {}", p.display())));
                }
            }
        }
        self.run.policy()?;
        if !(self.run.penalty >= 0.0) {
            return Err(CliError::Config("penalty must be nonnegative".into()));
        }
        if self.run.top_k.contains(&0) {
            return Err(CliError::Config("top_k levels must be positive".into()));
        }
        for [a, b] in [self.run.pre_vintages, self.run.shock_vintages, self.run.new_vintages] {
            if a > b {
                return Err(CliError::Config(format!("vintage range [{a}, {b}] is reversed")));
            }
        }
        if self.instrument.is_some() && i.centroids.is_none() {
            return Err(CliError::Config("the instrument needs `inputs.centroids`".into()));
        }
        if let Some(p) = &self.placebo {
            if p.replications == 0 {
                return Err(CliError::Config("placebo replications must be at least 1".into()));
            }
            match self.models.iter().find(|m| m.name == p.model) {
                Some(m) if m.estimator == "fe_ols" => {}
                Some(_) => return Err(CliError::Config(format!("placebo model `{}` must be fe_ols", p.model))),
                None => return Err(CliError::Config(format!("placebo model `{}` is not defined", p.model))),
            }
        }
        if !(self.offset.e_bar > 0.0) {
            return Err(CliError::Config("offset e_bar must be positive".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(CliError::Config(format!("model name `{}` used twice", m.name)));
            }
            if m.name.is_empty() || m.name.contains(['/', ',', '"']) {
                return Err(CliError::Config(format!("model name `{}` is empty or has a reserved character", m.name)));
            }
            if m.estimator == "tsls" && self.instrument.is_none() && uses_instrument(m) {
                return Err(CliError::Config(format!("model `{}` uses `z` but no [instrument] section is set", m.name)));
            }
            m.to_spec(&[self.run.reference_year], self.run.reference_year)?;
            m.terms()?;
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.run
            .output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("lockin-out"))
    }
}

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LOCKIN_OUT_DIR";

fn uses_instrument(m: &ModelConfig) -> bool {
    m.instrument.as_deref().and_then(|s| Term::parse(s).ok()).is_some_and(|t| t.uses_column("z"))
}
