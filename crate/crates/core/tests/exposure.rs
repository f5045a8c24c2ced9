use std::collections::BTreeMap;

use lockin_core::{
    build_mpw, build_predicted_wop, build_wop, centered_p_value, normalize_in_shares, offset_ratio, permute_wop,
    replication_seed, variance_decomposition, CoreError, ExposureTable, FlowTable, MissingOriginPolicy,
    VarianceDecomposition, WeightMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn weights(rows: &[(&str, &str, f64)]) -> WeightMatrix {
    normalize_in_shares(&FlowTable::new(rows.iter().map(|(o, d, c)| (o.to_string(), d.to_string(), *c))).unwrap())
}

const DROP: MissingOriginPolicy = MissingOriginPolicy::DropAndRenormalize;

#[test]
fn wop_fixtures() {
    let w = weights(&[("a", "d", 5.0)]);
    assert_eq!(build_wop(&w, &map(&[("a", 400.0)]), DROP).values["d"], 400.0);
    let w = weights(&[("a", "d", 3.0), ("b", "d", 7.0)]);
    let v = build_wop(&w, &map(&[("a", 400.0), ("b", 500.0)]), DROP).values["d"];
    assert!((v - 470.0).abs() < 1e-12);
}

#[test]
fn wop_matches_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let counts: Vec<f64> = (0..10).map(|_| rng.random_range(1.0..100.0)).collect();
    let pays: Vec<f64> = (0..10).map(|_| rng.random_range(350.0..550.0)).collect();
    let rows: Vec<(String, String, f64)> = (0..10).map(|i| (format!("o{i}"), "d".to_string(), counts[i])).collect();
    let w = normalize_in_shares(&FlowTable::new(rows).unwrap());
    let p: BTreeMap<String, f64> = (0..10).map(|i| (format!("o{i}"), pays[i])).collect();
    let total: f64 = counts.iter().sum();
    let expect: f64 = counts.iter().zip(&pays).map(|(c, p)| c / total * p).sum();
    assert!((build_wop(&w, &p, DROP).values["d"] - expect).abs() < 1e-10);
}

#[test]
fn missing_origin_policies() {
    let w = weights(&[("a", "d", 3.0), ("b", "d", 7.0), ("a", "e", 1.0)]);
    let p = map(&[("a", 400.0)]);
    let dropped = build_wop(&w, &p, DROP);
    assert_eq!(dropped.values["d"], 400.0);
    assert_eq!(dropped.incomplete, vec!["d".to_string()]);
    let marked = build_wop(&w, &p, MissingOriginPolicy::MarkMissing);
    assert!(!marked.values.contains_key("d"));
    assert_eq!(marked.missing, vec!["d".to_string()]);
    assert_eq!(marked.values["e"], 400.0);
    // no origin with a payment at all
    let none = build_wop(&w, &BTreeMap::new(), DROP);
    assert!(none.values.is_empty());
    assert_eq!(none.missing.len(), 2);
}

#[test]
fn predicted_wop_fixtures() {
    let w = weights(&[("a", "d", 1.0), ("b", "d", 1.0)]);
    let p = map(&[("a", 400.0), ("b", 500.0)]);
    assert!((build_predicted_wop(&w, &p, DROP).values["d"] - 450.0).abs() < 1e-12);
    let w = weights(&[("a", "d", 2.0), ("b", "d", 9.0), ("d", "a", 4.0), ("b", "a", 1.0)]);
    let p = map(&[("a", 410.0), ("b", 520.0), ("d", 380.0)]);
    assert_eq!(build_predicted_wop(&w, &p, DROP), build_wop(&w, &p, DROP));
}

#[test]
fn mpw_fixtures() {
    let t = build_mpw(&map(&[("d", 641.42)]), &map(&[("d", 427.11)]));
    assert!((t.get("d").unwrap().mpw.unwrap() - 214.31).abs() < 1e-9);
    let t = build_mpw(&map(&[("d", 500.0)]), &map(&[("d", 500.0)]));
    assert_eq!(t.get("d").unwrap().mpw, Some(0.0));
    // single origin: the wedge is P^new_d - P^old_o
    let w = weights(&[("o", "d", 8.0)]);
    let wop = build_wop(&w, &map(&[("o", 433.0)]), DROP).values;
    let t = build_mpw(&map(&[("d", 612.5)]), &wop);
    assert_eq!(t.get("d").unwrap().mpw, Some(612.5 - 433.0));
}

fn random_table(seed: u64, n: usize) -> ExposureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = BTreeMap::new();
    let mut w = BTreeMap::new();
    for i in 0..n {
        let cz = format!("z{i:03}");
        p.insert(cz.clone(), rng.random_range(550.0..700.0));
        if rng.random_bool(0.9) {
            w.insert(cz, rng.random_range(380.0..480.0));
        }
    }
    build_mpw(&p, &w)
}

fn direct_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn published_moment_consistency() {
    let d = VarianceDecomposition::from_moments(9.0, 46.9, 3.3);
    assert!((d.var_mpw - 49.3).abs() < 1e-12);
    assert!((d.cov_term + 6.6).abs() < 1e-12);
    let corr = 3.3 / (3.0 * 6.85);
    assert!((0.159..=0.162).contains(&corr));
    assert!((0.159..=0.162).contains(&d.corr));
}

#[test]
fn constant_p_new_has_no_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p: BTreeMap<String, f64> = (0..30).map(|i| (format!("z{i}"), 640.0)).collect();
    let w: BTreeMap<String, f64> = (0..30).map(|i| (format!("z{i}"), rng.random_range(400.0..450.0))).collect();
    let d = variance_decomposition(&build_mpw(&p, &w)).unwrap();
    assert!((d.var_mpw - d.var_wop).abs() < 1e-9 * d.var_wop);
    assert!(d.cov_term.abs() < 1e-9);
    assert_eq!(d.var_pnew, 0.0);
}

#[test]
fn decomposition_needs_two_rows() {
    let t = build_mpw(&map(&[("a", 1.0)]), &map(&[("a", 0.5)]));
    assert!(matches!(variance_decomposition(&t), Err(CoreError::InsufficientData(_))));
}

proptest! {
    #[test]
    fn variance_identity(seed in 0u64..100_000, n in 3usize..80) {
        let t = random_table(seed, n);
        let rows: Vec<(f64, f64, f64)> = t.rows().iter().filter_map(|r| Some((r.p_new?, r.wop?, r.mpw?))).collect();
        prop_assume!(rows.len() >= 2);
        let d = variance_decomposition(&t).unwrap();
        let direct = direct_var(&rows.iter().map(|r| r.0 - r.1).collect::<Vec<_>>());
        prop_assert!((d.var_mpw - direct).abs() <= 1e-10 * direct.max(1e-300));
        prop_assert!((d.var_pnew + d.var_wop + d.cov_term - d.var_mpw).abs() <= 1e-10 * d.var_mpw);
        for r in t.rows() {
            if let (Some(p), Some(w)) = (r.p_new, r.wop) {
                prop_assert_eq!(r.mpw, Some(p - w));
            }
        }
    }

    #[test]
    fn permutation_preserves_columns(seed in 0u64..100_000, s in any::<u64>()) {
        let t = random_table(seed, 40);
        let perm = permute_wop(&t, s);
        let mut a: Vec<f64> = t.rows().iter().filter_map(|r| r.wop).collect();
        let mut b: Vec<f64> = perm.rows().iter().filter_map(|r| r.wop).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        for (x, y) in t.rows().iter().zip(perm.rows()) {
            prop_assert_eq!(x.p_new, y.p_new);
            if let (Some(p), Some(w)) = (y.p_new, y.wop) {
                prop_assert_eq!(y.mpw, Some(p - w));
            }
        }
        let mean = |t: &ExposureTable| {
            let v: Vec<f64> = t.rows().iter().filter_map(|r| r.mpw).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        prop_assert!((mean(&t) - mean(&perm)).abs() < 1e-9);
    }

    #[test]
    fn p_value_in_unit_interval(actual in -10.0..10.0f64, pl in prop::collection::vec(-5.0..5.0f64, 1..50)) {
        let p = centered_p_value(actual, &pl).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
    }
}

#[test]
fn permutation_is_seeded() {
    let t = random_table(1, 30);
    assert_eq!(permute_wop(&t, 5), permute_wop(&t, 5));
    assert_ne!(permute_wop(&t, 5), permute_wop(&t, 6));
    let seeds: Vec<u64> = (0..3).map(|r| replication_seed(42, r)).collect();
    assert_eq!(seeds, (0..3).map(|r| replication_seed(42, r)).collect::<Vec<_>>());
}

#[test]
fn p_value_fixtures() {
    assert_eq!(centered_p_value(0.0, &[-1.0, 0.0, 1.0]).unwrap(), 1.0);
    assert_eq!(centered_p_value(2.0, &[-1.0, 0.0, 1.0]).unwrap(), 0.25);
    let placebos: Vec<f64> = (0..999).map(|i| (i as f64 * 0.731).sin()).collect();
    assert!((centered_p_value(50.0, &placebos).unwrap() - 1.0 / 1000.0).abs() < 1e-15);
    assert!(centered_p_value(1.0, &[]).is_err());
}

#[test]
fn offset_fixtures() {
    let a = offset_ratio(-0.059, 0.018, 0.45).unwrap();
    let b = offset_ratio(-0.059, 0.0043, 0.45).unwrap();
    assert!((a - 0.45 * 0.018 / 0.059).abs() < 1e-15);
    assert_eq!(format!("{a:.2}"), "0.14");
    assert_eq!(format!("{b:.2}"), "0.03");
    assert_eq!(offset_ratio(-0.059, 0.0, 0.45).unwrap(), 0.0);
    assert!(offset_ratio(0.0, 0.018, 0.45).is_err());
}

#[test]
fn ingested_rows_must_satisfy_identity() {
    let t = random_table(9, 10);
    assert_eq!(ExposureTable::from_rows(t.rows().to_vec()).unwrap(), t);
    let mut rows = t.rows().to_vec();
    let i = rows.iter().position(|r| r.mpw.is_some()).unwrap();
    rows[i].mpw = rows[i].mpw.map(|m| m + 0.5);
    assert!(ExposureTable::from_rows(rows).is_err());
}
