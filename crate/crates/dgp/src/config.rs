use serde::Deserialize;

use crate::error::{DgpError, Result};

/// Parameters of a synthetic world. Every field has a default, so a config
/// file only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_cz: usize,
    pub n_counties_per_cz: usize,
    /// Consecutive commuting zones (row-major on the grid) sharing a state.
    pub cz_per_state: usize,
    pub n_lenders: usize,
    pub n_soc: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub post_start: i32,
    /// Years whose average is the Bartik baseline.
    pub bartik_baseline_years: Vec<i32>,

    pub true_beta_migration: f64,
    pub true_theta_h1b: f64,
    pub true_triple: f64,

    /// (β0, β1, β2, β3): intercept, log origin population, log destination
    /// population, log distance.
    pub gravity: [f64; 4],
    /// Only the nearest origins send migrants to a destination.
    pub feeders_per_destination: usize,
    /// Standard deviation of the log multiplicative flow noise.
    pub flow_noise: f64,

    /// Standard deviation of lender price positions, $/mo per $100k.
    pub lender_scale: f64,
    /// Distance scale of a lender's regional footprint, km.
    pub lender_reach_km: f64,
    /// Amplitude of the smooth local payment field in 2020–2021, $/mo.
    pub local_price_scale: f64,
    /// Shock-vintage base payment by year offset from 2020, $/mo per $100k.
    pub shock_base_payment: [f64; 2],
    pub pre_base_payment: f64,
    /// Shock-vintage payment slopes on the loan covariates, $/mo.
    pub old_payment_slopes: Vec<f64>,
    pub payment_noise: f64,
    /// 2024 pricing rule: annual rate = intercept + county effect + slopes'x.
    pub new_rate_intercept: f64,
    pub new_rate_slopes: Vec<f64>,
    pub new_rate_county_sd: f64,
    pub new_rate_noise: f64,
    pub loans_pre_per_county: usize,
    pub loans_shock_per_county: usize,
    pub loans_new_per_county: usize,

    pub outcome_noise: f64,
    pub cz_effect_sd: f64,
    /// AR(1) coefficient of the within-CZ outcome noise.
    pub cluster_rho: f64,
    /// Post-period outcome loading on the feeder-weighted local price field.
    pub endogeneity: f64,
    pub control_slope: f64,
    pub h1b_noise: f64,
    pub soc_noise: f64,
    pub bartik_slope: f64,
    /// When false every Bartik shock is zero.
    pub bartik_enabled: bool,
    /// NB2 dispersion of the H-1B counts.
    pub dispersion: f64,
    /// H-1B requests per employee before the shock.
    pub h1b_base_rate: f64,

    pub master_seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_cz: 200,
            n_counties_per_cz: 3,
            cz_per_state: 10,
            n_lenders: 12,
            n_soc: 8,
            first_year: 2017,
            last_year: 2024,
            post_start: 2022,
            bartik_baseline_years: vec![2017, 2018, 2019],
            true_beta_migration: -0.059,
            true_theta_h1b: 0.018,
            true_triple: 0.048,
            gravity: [-2.0, 1.0, 0.9, -2.5],
            feeders_per_destination: 15,
            flow_noise: 0.3,
            lender_scale: 20.0,
            lender_reach_km: 250.0,
            local_price_scale: 14.0,
            shock_base_payment: [432.0, 424.0],
            pre_base_payment: 480.0,
            old_payment_slopes: vec![-5.0, 4.0],
            payment_noise: 8.0,
            new_rate_intercept: 0.069,
            new_rate_slopes: vec![-0.0008, 0.0006],
            new_rate_county_sd: 0.0004,
            new_rate_noise: 0.0005,
            loans_pre_per_county: 40,
            loans_shock_per_county: 30,
            loans_new_per_county: 15,
            outcome_noise: 0.7,
            cz_effect_sd: 1.0,
            cluster_rho: 0.5,
            endogeneity: 0.0,
            control_slope: 0.2,
            h1b_noise: 0.3,
            soc_noise: 0.3,
            bartik_slope: 0.05,
            bartik_enabled: true,
            dispersion: 0.5,
            h1b_base_rate: 0.002,
            master_seed: 20240601,
        }
    }
}

impl DgpConfig {
    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.last_year
    }

    pub fn n_states(&self) -> usize {
        self.n_cz.div_ceil(self.cz_per_state)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DgpError::Config(m.to_string()));
        if self.n_cz < 2 || self.n_counties_per_cz == 0 || self.n_lenders == 0 || self.n_soc == 0 {
            return fail("n_cz must be at least 2 and the other counts positive");
        }
        if self.cz_per_state == 0 || self.n_states() > 99 {
            return fail("cz_per_state must give between 1 and 99 states");
        }
        if self.cz_per_state * self.n_counties_per_cz > 999 {
            return fail("more than 999 counties in a state");
        }
        if self.first_year > 2019 || self.last_year < 2024 || !(2021..=self.last_year).contains(&self.post_start) {
            return fail("years must span 2019 to 2024 with post_start in 2021..=last_year");
        }
        if self.bartik_baseline_years.is_empty() || self.bartik_baseline_years.iter().any(|y| !self.years().contains(y)) {
            return fail("bartik baseline years must be non-empty and inside the panel");
        }
        if self.feeders_per_destination == 0 || self.feeders_per_destination >= self.n_cz {
            return fail("feeders_per_destination must be in 1..n_cz");
        }
        if self.old_payment_slopes.len() != self.new_rate_slopes.len() {
            return fail("old and new pricing slopes must cover the same covariates");
        }
        if self.loans_pre_per_county == 0 || self.loans_shock_per_county == 0 || self.loans_new_per_county < 2 {
            return fail("every county needs pre and shock loans and at least two 2024 loans");
        }
        let scales = [
            self.flow_noise,
            self.lender_scale,
            self.local_price_scale,
            self.payment_noise,
            self.new_rate_county_sd,
            self.new_rate_noise,
            self.outcome_noise,
            self.cz_effect_sd,
            self.h1b_noise,
            self.soc_noise,
            self.dispersion,
        ];
        if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return fail("noise scales must be finite and nonnegative");
        }
        if !(-1.0 < self.cluster_rho && self.cluster_rho < 1.0) {
            return fail("cluster_rho must lie in (-1, 1)");
        }
        if !(self.lender_reach_km > 0.0) || !(self.h1b_base_rate > 0.0) {
            return fail("lender_reach_km and h1b_base_rate must be positive");
        }
        Ok(())
    }
}
