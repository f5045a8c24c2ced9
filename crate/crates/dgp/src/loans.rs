//! Lenders with regional footprints and national price positions, and the
//! three loan vintages: 2018–2019 (lender shares), 2020–2021 (locked-in
//! payments) and 2024 (the repricing rule).

use std::collections::BTreeMap;

use lockin_core::{LoanRecord, LoanSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::DgpConfig;
use crate::error::Result;
use crate::geography::{County, Geography};

#[derive(Debug, Clone, PartialEq)]
pub struct Lender {
    pub name: String,
    pub home_latitude: f64,
    pub home_longitude: f64,
    /// National price position, $/mo per $100k.
    pub position: f64,
}

/// Latent values behind one 2020–2021 loan.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockLoanTruth {
    pub loan_id: String,
    pub county: String,
    pub cz: String,
    /// Normalized payment the contract rate was solved from.
    pub old_payment: f64,
    /// Rate under the noise-free 2024 rule.
    pub new_rate: f64,
    /// Local price field at the loan's county.
    pub local_shift: f64,
    pub lender_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoanWorld {
    pub covariate_names: Vec<String>,
    pub loans: LoanSet,
    pub lenders: Vec<Lender>,
    pub shock_truth: Vec<ShockLoanTruth>,
    /// County -> share of each lender (same order as `lenders`).
    pub lender_shares: BTreeMap<String, Vec<f64>>,
    /// County -> 2024 county rate effect.
    pub new_rate_effects: BTreeMap<String, f64>,
}

const TERM_MONTHS: i32 = 360;
const NORMALIZED: f64 = 100_000.0;

/// Normalized monthly payment by the textbook annuity formula.
pub fn annuity_payment(rate: f64) -> f64 {
    if rate == 0.0 {
        return NORMALIZED / f64::from(TERM_MONTHS);
    }
    let i = rate / 12.0;
    NORMALIZED * i / (1.0 - (1.0 + i).powi(-TERM_MONTHS))
}

/// Annual rate whose normalized payment equals `target`, by Newton steps on
/// the annuity formula with a bisection fallback.
pub fn rate_for_payment(target: f64) -> f64 {
    let floor = NORMALIZED / f64::from(TERM_MONTHS);
    if target <= floor {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut r = 0.05;
    for _ in 0..100 {
        let f = annuity_payment(r) - target;
        if f.abs() <= 1e-12 * target {
            return r;
        }
        if f > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let h = 1e-7;
        let slope = (annuity_payment(r + h) - annuity_payment(r - h)) / (2.0 * h);
        let step = r - f / slope;
        r = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    r
}

fn covariate_names(k: usize) -> Vec<String> {
    let named = ["credit_score_z", "ltv_z"];
    (0..k).map(|j| named.get(j).map_or_else(|| format!("x{}", j + 1), |s| s.to_string())).collect()
}

fn km_between(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * a.sqrt().asin()
}

/// Smooth field over the map with unit standard deviation, roughly.
struct PriceField {
    phase: [f64; 3],
}

impl PriceField {
    fn at(&self, lat: f64, lon: f64) -> f64 {
        let a = (0.8 * lat + self.phase[0]).sin() * (0.6 * lon + self.phase[1]).cos();
        let b = 0.5 * (0.5 * (lat - lon) + self.phase[2]).sin();
        (a + b) / 0.61
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_index(shares: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (j, s) in shares.iter().enumerate() {
        acc += s;
        if u < acc {
            return j;
        }
    }
    shares.len() - 1
}

pub fn generate_loans(config: &DgpConfig, geo: &Geography, rng: &mut ChaCha8Rng) -> Result<LoanWorld> {
    let k = config.old_payment_slopes.len();
    let names = covariate_names(k);
    let mut lenders: Vec<Lender> = (0..config.n_lenders)
        .map(|l| {
            // One home per contiguous block of counties, so footprints cover the map.
            let (nc, nl) = (geo.counties.len(), config.n_lenders);
            let home = &geo.counties[rng.random_range(l * nc / nl..((l + 1) * nc / nl).max(l * nc / nl + 1).min(nc))];
            Lender {
                name: format!("lender{:02}", l + 1),
                home_latitude: home.latitude,
                home_longitude: home.longitude,
                position: gauss(rng),
            }
        })
        .collect();
    // Positions are standardized so their cross-lender sd is exactly lender_scale.
    let n = lenders.len() as f64;
    let m = lenders.iter().map(|l| l.position).sum::<f64>() / n;
    let sd = (lenders.iter().map(|l| (l.position - m).powi(2)).sum::<f64>() / n).sqrt();
    for l in &mut lenders {
        l.position = if sd > 0.0 { config.lender_scale * (l.position - m) / sd } else { 0.0 };
    }
    let field = PriceField {
        phase: [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)],
    };
    let county_sd = Normal::new(0.0, config.new_rate_county_sd).expect("validated sd");
    let rate_noise = Normal::new(0.0, config.new_rate_noise).expect("validated sd");
    let pay_noise = Normal::new(0.0, config.payment_noise).expect("validated sd");

    let mut loans = Vec::new();
    let mut shock_truth = Vec::new();
    let mut lender_shares = BTreeMap::new();
    let mut new_rate_effects = BTreeMap::new();
    let mut next_id = 0usize;
    let mut push = |loans: &mut Vec<LoanRecord>, c: &County, lender: usize, year: i32, rate: f64, x: Vec<f64>, rng: &mut ChaCha8Rng| {
        next_id += 1;
        let id = format!("L{next_id:07}");
        loans.push(LoanRecord {
            loan_id: id.clone(),
            county: c.code.clone(),
            lender: lenders[lender].name.clone(),
            vintage_year: year,
            annual_rate: rate,
            principal: (rng.random_range(120.0..480.0_f64) * 1000.0).round(),
            covariates: x,
        });
        id
    };

    for c in &geo.counties {
        let raw: Vec<f64> = lenders
            .iter()
            .map(|l| (-km_between(c.latitude, c.longitude, l.home_latitude, l.home_longitude) / config.lender_reach_km).exp() + 0.02)
            .collect();
        let total: f64 = raw.iter().sum();
        let shares: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let cov_mean: Vec<f64> = (0..k).map(|_| 0.5 * gauss(rng)).collect();
        let draw_x = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            cov_mean.iter().map(|m| m + gauss(rng)).collect()
        };
        let local = config.local_price_scale * (field.at(c.latitude, c.longitude) + 0.3 * gauss(rng));
        let effect = county_sd.sample(rng);
        let new_rule = |x: &[f64]| {
            config.new_rate_intercept + effect + x.iter().zip(&config.new_rate_slopes).map(|(a, b)| a * b).sum::<f64>()
        };

        for i in 0..config.loans_pre_per_county {
            let l = draw_index(&shares, rng);
            let x = draw_x(rng);
            let pay = config.pre_base_payment + lenders[l].position + pay_noise.sample(rng);
            push(&mut loans, c, l, 2018 + (i % 2) as i32, rate_for_payment(pay), x, rng);
        }
        for i in 0..config.loans_shock_per_county {
            let l = draw_index(&shares, rng);
            let x = draw_x(rng);
            let year_offset = i % 2;
            let covariate_part: f64 = x.iter().zip(&config.old_payment_slopes).map(|(a, b)| a * b).sum();
            let pay = config.shock_base_payment[year_offset] + local + lenders[l].position + covariate_part + pay_noise.sample(rng);
            let new_rate = new_rule(&x);
            let id = push(&mut loans, c, l, 2020 + year_offset as i32, rate_for_payment(pay), x, rng);
            shock_truth.push(ShockLoanTruth {
                loan_id: id,
                county: c.code.clone(),
                cz: c.cz.clone(),
                old_payment: pay,
                new_rate,
                local_shift: local,
                lender_position: lenders[l].position,
            });
        }
        for _ in 0..config.loans_new_per_county {
            let l = draw_index(&shares, rng);
            let x = draw_x(rng);
            let rate = new_rule(&x) + rate_noise.sample(rng);
            push(&mut loans, c, l, 2024, rate, x, rng);
        }
        lender_shares.insert(c.code.clone(), shares);
        new_rate_effects.insert(c.code.clone(), effect);
    }
    Ok(LoanWorld {
        covariate_names: names.clone(),
        loans: LoanSet::new(names, loans)?,
        lenders,
        shock_truth,
        lender_shares,
        new_rate_effects,
    })
}
