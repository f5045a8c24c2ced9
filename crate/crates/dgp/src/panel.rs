//! Outcome panels: CZ-year migration and H-1B outcomes, CZ-SOC-year
//! sponsorship with Bartik shocks.

use std::collections::BTreeMap;

use lockin_core::{build_bartik, BartikCell};
use lockin_panel::PanelDataset;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};

use crate::config::DgpConfig;
use crate::error::Result;
use crate::truth::TrueExposure;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// AR(1) series of length `n` with stationary standard deviation `sd`.
fn ar1(n: usize, rho: f64, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut e = sd * normal(rng);
    out.push(e);
    let innovation = sd * (1.0 - rho * rho).sqrt();
    for _ in 1..n {
        e = rho * e + innovation * normal(rng);
        out.push(e);
    }
    out
}

fn mean_of(exposures: &BTreeMap<String, TrueExposure>, f: impl Fn(&TrueExposure) -> f64) -> f64 {
    exposures.values().map(f).sum::<f64>() / exposures.len().max(1) as f64
}

fn nb2_draw(mu: f64, alpha: f64, rng: &mut ChaCha8Rng) -> f64 {
    let lambda = if alpha > 0.0 {
        mu * Gamma::new(1.0 / alpha, alpha).expect("positive shape").sample(rng)
    } else {
        mu
    };
    if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(rng)
    } else {
        0.0
    }
}

/// CZ-year panel. Columns: `y_mig` (in-migration per 1,000), `h1b_rate`
/// (per 1,000), `h1b_count` (NB2 counts), `log_emp` (offset) and `ctrl`.
/// Units and clusters are commuting zones.
pub fn generate_panel(
    config: &DgpConfig,
    exposures: &BTreeMap<String, TrueExposure>,
    populations: &BTreeMap<String, f64>,
    rng: &mut ChaCha8Rng,
) -> Result<PanelDataset> {
    let years: Vec<i32> = config.years().collect();
    let t = years.len();
    let mpw_bar = mean_of(exposures, |e| e.mpw);
    let local_bar = mean_of(exposures, |e| e.feeder_local);
    let year_fx: Vec<f64> = (0..t).map(|i| 0.05 * i as f64 + 0.1 * normal(rng)).collect();
    let h1b_year_fx: Vec<f64> = (0..t).map(|i| 0.03 * i as f64 + 0.05 * normal(rng)).collect();
    let cz_fx = Normal::new(0.0, config.cz_effect_sd).expect("validated sd");

    let n = exposures.len() * t;
    let (mut unit, mut period) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y_mig, mut h1b_rate, mut h1b_count, mut log_emp, mut ctrl) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (cz, e) in exposures {
        let a = 5.0 + cz_fx.sample(rng);
        let a_h = 1.0 + 0.5 * cz_fx.sample(rng);
        let a_count = 0.3 * normal(rng);
        let emp = 0.45 * populations.get(cz).copied().unwrap_or(100_000.0);
        let noise = ar1(t, config.cluster_rho, config.outcome_noise, rng);
        let h_noise = ar1(t, config.cluster_rho, config.h1b_noise, rng);
        for (i, &year) in years.iter().enumerate() {
            let post = f64::from(u8::from(year >= config.post_start));
            let x = normal(rng);
            let le = emp.ln() + 0.01 * i as f64;
            let y = a
                + year_fx[i]
                + config.true_beta_migration * e.mpw * post
                + config.control_slope * x
                + config.endogeneity * (e.feeder_local - local_bar) * post
                + noise[i];
            let h = a_h + h1b_year_fx[i] + config.true_theta_h1b * e.mpw * post + h_noise[i];
            let mu = (le + config.h1b_base_rate.ln() + a_count + h1b_year_fx[i]
                + config.true_theta_h1b * (e.mpw - mpw_bar) * post)
                .exp();
            unit.push(cz.clone());
            period.push(year);
            y_mig.push(y);
            h1b_rate.push(h);
            h1b_count.push(nb2_draw(mu, config.dispersion, rng));
            log_emp.push(le);
            ctrl.push(x);
        }
    }
    Ok(PanelDataset::new(unit.clone(), period, None)?
        .with_cluster(unit)?
        .with_column("y_mig", y_mig)?
        .with_column("h1b_rate", h1b_rate)?
        .with_column("h1b_count", h1b_count)?
        .with_column("log_emp", log_emp)?
        .with_column("ctrl", ctrl)?)
}

pub fn soc_code(s: usize) -> String {
    format!("soc{:02}", s + 11)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BartikInputs {
    pub shares: BTreeMap<(String, String), f64>,
    pub national_emp: BTreeMap<(String, i32), f64>,
    pub cells: Vec<BartikCell>,
}

/// Baseline occupation shares per CZ and national SOC employment paths,
/// with the resulting demeaned shocks. All shocks are zero when Bartik is
/// disabled.
pub fn generate_bartik(config: &DgpConfig, cz_codes: &[String], rng: &mut ChaCha8Rng) -> Result<BartikInputs> {
    let mut shares = BTreeMap::new();
    let unit_gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    for cz in cz_codes {
        let raw: Vec<f64> = (0..config.n_soc).map(|_| unit_gamma.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        for (s, r) in raw.iter().enumerate() {
            shares.insert((cz.clone(), soc_code(s)), r / total);
        }
    }
    let mut national_emp = BTreeMap::new();
    for s in 0..config.n_soc {
        let mut level: f64 = rng.random_range(50_000.0..500_000.0_f64).ln();
        let drift = rng.random_range(-0.02..0.06);
        for year in config.years() {
            national_emp.insert((soc_code(s), year), level.exp());
            let shock = if year + 1 >= config.post_start { 0.08 * normal(rng) } else { 0.03 * normal(rng) };
            level += drift + shock;
        }
    }
    let mut cells = build_bartik(&shares, &national_emp, &config.bartik_baseline_years)?;
    if !config.bartik_enabled {
        cells.iter_mut().for_each(|c| c.b = 0.0);
    }
    Ok(BartikInputs { shares, national_emp, cells })
}

/// CZ-SOC-year panel with outcome `h1b_soc`: the three pairwise fixed
/// effects, a Bartik slope and the triple interaction. Groups are SOC codes,
/// clusters are commuting zones. Carries the Bartik shock as column `b`.
pub fn generate_soc_panel(
    config: &DgpConfig,
    exposures: &BTreeMap<String, TrueExposure>,
    bartik: &[BartikCell],
    rng: &mut ChaCha8Rng,
) -> Result<PanelDataset> {
    let b_of: BTreeMap<(&str, &str, i32), f64> =
        bartik.iter().map(|c| ((c.cz.as_str(), c.soc.as_str(), c.year), c.b)).collect();
    let years: Vec<i32> = config.years().collect();
    let socs: Vec<String> = (0..config.n_soc).map(soc_code).collect();
    let soc_year: Vec<Vec<f64>> = socs.iter().map(|_| years.iter().map(|_| 0.5 * normal(rng)).collect()).collect();
    let (mut unit, mut period, mut group, mut h, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (cz, e) in exposures {
        let cz_year: Vec<f64> = years.iter().map(|_| normal(rng)).collect();
        for (si, soc) in socs.iter().enumerate() {
            let cz_soc = normal(rng);
            let noise = ar1(years.len(), config.cluster_rho, config.soc_noise, rng);
            for (ti, &year) in years.iter().enumerate() {
                let post = f64::from(u8::from(year >= config.post_start));
                let bc = b_of.get(&(cz.as_str(), soc.as_str(), year)).copied().unwrap_or(0.0);
                unit.push(cz.clone());
                period.push(year);
                group.push(soc.clone());
                b.push(bc);
                h.push(
                    cz_year[ti]
                        + cz_soc
                        + soc_year[si][ti]
                        + config.bartik_slope * bc
                        + config.true_triple * e.mpw * post * bc
                        + noise[ti],
                );
            }
        }
    }
    Ok(PanelDataset::new(unit.clone(), period, Some(group))?
        .with_cluster(unit)?
        .with_column("h1b_soc", h)?
        .with_column("b", b)?)
}

/// Adds the true `mpw`, `p_new`, `wop` and a `post` indicator to a panel
/// whose units are commuting zones.
pub fn attach_true_exposures(
    data: PanelDataset,
    exposures: &BTreeMap<String, TrueExposure>,
    post_start: i32,
) -> Result<PanelDataset> {
    let pick = |f: fn(&TrueExposure) -> f64| -> Vec<f64> {
        data.units().iter().map(|u| exposures.get(u).map_or(f64::NAN, f)).collect()
    };
    let (mpw, p_new, wop) = (pick(|e| e.mpw), pick(|e| e.p_new), pick(|e| e.wop));
    let post = data.periods().iter().map(|&y| f64::from(u8::from(y >= post_start))).collect();
    Ok(data.with_column("mpw", mpw)?.with_column("p_new", p_new)?.with_column("wop", wop)?.with_column("post", post)?)
}
