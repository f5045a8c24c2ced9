use std::collections::BTreeMap;

use lockin_core::{
    aggregate_to_cz, apply_crosswalk, build_mpw, build_wop, compute_p_new, compute_p_old, fips_state, fit_gravity,
    fit_pricing_model, lender_leaveout_payments, normalize_in_shares, LeaveOutOptions, MissingOriginPolicy,
};
use lockin_dgp::{
    attach_true_exposures, generate_panel, generate_soc_panel, generate_world, rate_for_payment, annuity_payment,
    DgpConfig, SyntheticWorld,
};
use lockin_panel::{fit_fe_ols, EstimationError, FeSet, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> DgpConfig {
    DgpConfig { n_cz: 40, cz_per_state: 5, ..DgpConfig::default() }
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn same_seed_same_world() {
    let a = generate_world(&small()).unwrap();
    let b = generate_world(&small()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let c = generate_world(&DgpConfig { master_seed: 7, ..small() }).unwrap();
    assert_ne!(a.loans, c.loans);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(generate_world(&DgpConfig { n_cz: 1, ..small() }).is_err());
    assert!(generate_world(&DgpConfig { outcome_noise: -1.0, ..small() }).is_err());
    assert!(generate_world(&DgpConfig { feeders_per_destination: 40, ..small() }).is_err());
    assert!(generate_world(&DgpConfig { new_rate_slopes: vec![0.1], ..small() }).is_err());
}

#[test]
fn rate_inversion_round_trips() {
    for target in [300.0, 421.6, 480.0, 665.3, 900.0] {
        let r = rate_for_payment(target);
        assert!((annuity_payment(r) - target).abs() < 1e-9);
    }
    assert_eq!(rate_for_payment(100.0), 0.0);
}

#[test]
fn noise_free_pricing_is_recovered() {
    let cfg = DgpConfig { new_rate_noise: 0.0, ..small() };
    let w = generate_world(&cfg).unwrap();
    let model = fit_pricing_model(&w.loans.vintages(2024..=2024), 0.0).unwrap();
    for (a, b) in model.slopes.iter().zip(&cfg.new_rate_slopes) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

/// Rebuilds exposures from the microdata with the library routines.
fn rebuild(w: &SyntheticWorld) -> BTreeMap<String, (f64, f64, f64)> {
    let cz_map = w.cz_map();
    let model = fit_pricing_model(&w.loans.vintages(2024..=2024), 0.0).unwrap();
    let shock = w.loans.vintages(2020..=2021);
    let p_new = compute_p_new(&model, &shock, &cz_map).unwrap().payments();
    let p_old = compute_p_old(&shock, &cz_map).unwrap().payments();
    let flows = apply_crosswalk(&w.county_flows, &w.crosswalk().unwrap());
    assert_eq!(flows.dropped_mass, 0.0);
    let weights = normalize_in_shares(&flows.flows);
    let wop = build_wop(&weights, &p_old, MissingOriginPolicy::DropAndRenormalize);
    assert!(wop.incomplete.is_empty() && wop.missing.is_empty());
    let table = build_mpw(&p_new, &wop.values);
    table.rows().iter().map(|r| (r.cz.clone(), (r.p_new.unwrap(), r.wop.unwrap(), r.mpw.unwrap()))).collect()
}

#[test]
fn stored_exposures_close_the_pipeline() {
    let cfg = DgpConfig { new_rate_noise: 0.0, ..small() };
    let w = generate_world(&cfg).unwrap();
    let rebuilt = rebuild(&w);
    assert_eq!(rebuilt.len(), w.exposures.len());
    for (cz, e) in &w.exposures {
        let (p, o, m) = rebuilt[cz];
        assert!((p - e.p_new).abs() < 1e-8, "{cz} p_new {p} vs {}", e.p_new);
        assert!((o - e.wop).abs() < 1e-8, "{cz} wop {o} vs {}", e.wop);
        assert!((m - e.mpw).abs() < 1e-8);
        assert_eq!(e.mpw, e.p_new - e.wop);
    }
}

#[test]
fn noise_free_flows_recover_gravity() {
    let cfg = DgpConfig { flow_noise: 0.0, ..small() };
    let w = generate_world(&cfg).unwrap();
    let fit = fit_gravity(&w.cz_flows, &w.populations, &w.centroids).unwrap();
    let got = [fit.model.intercept, fit.model.pop_origin, fit.model.pop_dest, fit.model.distance];
    for (a, b) in got.iter().zip(&cfg.gravity) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn zero_distance_decay_gives_population_shares() {
    let cfg = DgpConfig { flow_noise: 0.0, gravity: [-2.0, 1.0, 0.9, 0.0], ..small() };
    let w = generate_world(&cfg).unwrap();
    let weights = normalize_in_shares(&w.cz_flows);
    for (_, shares) in weights.iter() {
        let total: f64 = shares.iter().map(|(o, _)| w.populations[o]).sum();
        for (o, s) in shares {
            assert!((s - w.populations[o] / total).abs() < 1e-12);
        }
    }
}

#[test]
fn every_destination_has_positive_inflow() {
    let w = generate_world(&small()).unwrap();
    let mut inflow: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, d, f) in w.cz_flows.iter() {
        *inflow.entry(d).or_default() += f;
    }
    assert_eq!(inflow.len(), w.cz_codes.len());
    assert!(inflow.values().all(|v| *v > 0.0));
}

fn leaveout_correlation(cfg: &DgpConfig) -> f64 {
    let w = generate_world(cfg).unwrap();
    let pre = w.loans.vintages(2018..=2019);
    let out = lender_leaveout_payments(&pre, &w.loans.vintages(2020..=2021), fips_state, LeaveOutOptions::default()).unwrap();
    let pred = aggregate_to_cz(&out.predictions, &pre, &w.cz_map());
    let a: Vec<f64> = w.cz_codes.iter().map(|c| pred[c]).collect();
    let b: Vec<f64> = w.cz_codes.iter().map(|c| w.exposures[c].p_old).collect();
    corr(&a, &b)
}

#[test]
fn lender_positions_drive_the_leaveout_prediction() {
    let base = DgpConfig { local_price_scale: 0.0, ..DgpConfig::default() };
    let informative = leaveout_correlation(&base);
    assert!(informative > 0.6, "{informative}");
    let null = leaveout_correlation(&DgpConfig { lender_scale: 0.0, ..base });
    assert!(null.abs() < 0.25, "{null}");
}

fn did(cfg: &DgpConfig, w: &SyntheticWorld, seed: u64) -> (f64, f64) {
    let panel = generate_panel(cfg, &w.exposures, &w.populations, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let d = attach_true_exposures(panel, &w.exposures, cfg.post_start).unwrap();
    let r = fit_fe_ols(&ModelSpec::fe_ols("y_mig", &["mpw*post", "ctrl"]).unwrap(), &d).unwrap();
    (r.coef[0], r.se[0])
}

#[test]
fn null_effect_is_sized() {
    let cfg = DgpConfig { true_beta_migration: 0.0, ..DgpConfig::default() };
    let w = generate_world(&cfg).unwrap();
    let inside = (0..200).filter(|&s| {
        let (b, se) = did(&cfg, &w, s);
        b.abs() < 3.0 * se
    });
    assert!(inside.count() >= 188);
}

#[test]
fn more_noise_widens_standard_errors() {
    let cfg = DgpConfig::default();
    let loud = DgpConfig { outcome_noise: 2.0 * cfg.outcome_noise, ..cfg.clone() };
    let w = generate_world(&cfg).unwrap();
    for seed in 0..10 {
        assert!(did(&loud, &w, seed).1 > did(&cfg, &w, seed).1);
    }
}

fn triple_spec() -> ModelSpec {
    ModelSpec::fe_ols("h1b_soc", &["mpw*post*b", "mpw*b", "post*b", "b"])
        .unwrap()
        .with_fe(vec![FeSet::pair("unit", "period"), FeSet::pair("unit", "group"), FeSet::pair("group", "period")])
}

#[test]
fn triple_interaction_is_recovered() {
    let w = generate_world(&small()).unwrap();
    let d = attach_true_exposures(w.soc_panel.clone(), &w.exposures, 2022).unwrap();
    let r = fit_fe_ols(&triple_spec(), &d).unwrap();
    assert!((r.coef[0] - 0.048).abs() < 3.0 * r.se[0], "{} ({})", r.coef[0], r.se[0]);
}

#[test]
fn absent_bartik_makes_the_triple_degenerate() {
    let w = generate_world(&DgpConfig { bartik_enabled: false, ..small() }).unwrap();
    let d = attach_true_exposures(w.soc_panel.clone(), &w.exposures, 2022).unwrap();
    assert!(matches!(fit_fe_ols(&triple_spec(), &d), Err(EstimationError::RankDeficient(_))));
}

#[test]
fn fixed_effects_only_world_has_zero_slopes() {
    let cfg = DgpConfig { true_triple: 0.0, bartik_slope: 0.0, soc_noise: 0.0, ..small() };
    let w = generate_world(&cfg).unwrap();
    let soc = generate_soc_panel(&cfg, &w.exposures, &w.bartik.cells, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let d = attach_true_exposures(soc, &w.exposures, 2022).unwrap();
    let r = fit_fe_ols(&triple_spec(), &d).unwrap();
    assert!(r.coef.iter().all(|b| b.abs() < 1e-8), "{:?}", r.coef);
}

#[test]
fn bartik_shocks_are_demeaned() {
    let w = generate_world(&small()).unwrap();
    let cells = w.bartik_cells();
    assert_eq!(cells.len(), 40 * 8 * 8);
    let mean = cells.iter().map(|c| c.b).sum::<f64>() / cells.len() as f64;
    assert!(mean.abs() < 1e-9);
}
