use std::collections::BTreeMap;

use lockin_core::{
    apply_crosswalk, fit_gravity, great_circle_distance, normalize_in_shares, population_weighted_centroid,
    predict_gravity_shares, truncate_top_k, Centroid, CoreError, Crosswalk, FlowTable, GravityModel, WeightMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn table(rows: &[(&str, &str, f64)]) -> FlowTable {
    FlowTable::new(rows.iter().map(|(o, d, c)| (o.to_string(), d.to_string(), *c))).unwrap()
}

fn row_sums_ok(w: &WeightMatrix) -> bool {
    w.iter().all(|(_, r)| (r.iter().map(|(_, s)| s).sum::<f64>() - 1.0).abs() < 1e-10 && r.iter().all(|(_, s)| *s >= 0.0))
}

#[test]
fn identity_crosswalk_is_noop() {
    let f = table(&[("a", "b", 3.0), ("b", "a", 1.5), ("c", "a", 2.0)]);
    let map: BTreeMap<String, String> = ["a", "b", "c"].iter().map(|s| (s.to_string(), s.to_string())).collect();
    let out = apply_crosswalk(&f, &Crosswalk::identity_like(&map));
    assert_eq!(out.flows, f);
    assert!(out.missing_counties.is_empty());
}

#[test]
fn split_county_splits_flow() {
    let f = table(&[("c1", "c2", 100.0)]);
    let cw = Crosswalk::new(vec![
        ("c1".to_string(), "z1".to_string(), 0.6),
        ("c1".to_string(), "z2".to_string(), 0.4),
        ("c2".to_string(), "z3".to_string(), 1.0),
    ])
    .unwrap();
    let out = apply_crosswalk(&f, &cw).flows;
    assert!((out.get("z1", "z3") - 60.0).abs() < 1e-12);
    assert!((out.get("z2", "z3") - 40.0).abs() < 1e-12);
}

#[test]
fn missing_counties_are_listed_and_dropped() {
    let f = table(&[("c1", "c2", 5.0), ("c9", "c2", 7.0)]);
    let cw = Crosswalk::new(vec![("c1".into(), "z1".into(), 1.0), ("c2".into(), "z2".into(), 1.0)]).unwrap();
    let out = apply_crosswalk(&f, &cw);
    assert_eq!(out.missing_counties, vec!["c9".to_string()]);
    assert_eq!(out.dropped_mass, 7.0);
    assert_eq!(out.flows.total(), 5.0);
}

fn random_crosswalk_instance(seed: u64) -> (FlowTable, Crosswalk) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for o in 0..10 {
        for d in 0..10 {
            if rng.random_bool(0.6) {
                rows.push((format!("c{o}"), format!("c{d}"), rng.random_range(0.0..500.0)));
            }
        }
    }
    let mut cw = Vec::new();
    for c in 0..10 {
        let a = rng.random_range(0.0..1.0);
        cw.push((format!("c{c}"), format!("z{}", c % 4), a));
        cw.push((format!("c{c}"), format!("z{}", (c + 1) % 4), 1.0 - a));
    }
    (FlowTable::new(rows).unwrap(), Crosswalk::new(cw).unwrap())
}

#[test]
fn crosswalk_conserves_mass() {
    for seed in 0..20 {
        let (f, cw) = random_crosswalk_instance(seed);
        let out = apply_crosswalk(&f, &cw).flows;
        assert!((out.total() - f.total()).abs() <= 1e-9 * f.total());
    }
}

#[test]
fn in_share_fixtures() {
    let w = normalize_in_shares(&table(&[("a", "d", 12.0)]));
    assert_eq!(w.shares("d").unwrap(), &[("a".to_string(), 1.0)]);

    let w = normalize_in_shares(&table(&[("a", "d", 30.0), ("b", "d", 70.0), ("d", "d", 500.0)]));
    let s = w.shares("d").unwrap();
    assert!((s[0].1 - 0.3).abs() < 1e-15 && (s[1].1 - 0.7).abs() < 1e-15);
    assert_eq!(s.len(), 2);

    let w = normalize_in_shares(&table(&[("d", "d", 40.0)]));
    assert!(w.is_empty());
}

fn three_origin() -> WeightMatrix {
    normalize_in_shares(&table(&[("a", "d", 50.0), ("b", "d", 30.0), ("c", "d", 20.0)]))
}

#[test]
fn top_k_fixtures() {
    let w = three_origin();
    assert_eq!(truncate_top_k(&w, 3).unwrap(), w);
    assert_eq!(truncate_top_k(&w, 7).unwrap(), w);
    assert_eq!(truncate_top_k(&w, 1).unwrap().shares("d").unwrap(), &[("a".to_string(), 1.0)]);
    let two = truncate_top_k(&w, 2).unwrap();
    let s = two.shares("d").unwrap();
    assert_eq!(s[0].0, "a");
    assert!((s[0].1 - 0.625).abs() < 1e-12 && (s[1].1 - 0.375).abs() < 1e-12);
    assert!(truncate_top_k(&w, 0).is_err());
}

#[test]
fn top_k_ties_go_to_smaller_code() {
    let w = normalize_in_shares(&table(&[("b", "d", 10.0), ("a", "d", 10.0), ("c", "d", 5.0)]));
    let one = truncate_top_k(&w, 1).unwrap();
    assert_eq!(one.shares("d").unwrap()[0].0, "a");
}

fn random_weights(seed: u64, n: usize) -> WeightMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for o in 0..n {
        for d in 0..n {
            if rng.random_bool(0.7) {
                // integer counts make ties likely
                rows.push((format!("o{o:02}"), format!("o{d:02}"), f64::from(rng.random_range(0..6u8))));
            }
        }
    }
    normalize_in_shares(&FlowTable::new(rows).unwrap())
}

proptest! {
    #[test]
    fn truncation_idempotent_nested_and_normalized(seed in 0u64..10_000, k in 1usize..8) {
        let w = random_weights(seed, 9);
        prop_assert!(row_sums_ok(&w));
        let t = truncate_top_k(&w, k).unwrap();
        prop_assert!(row_sums_ok(&t));
        prop_assert_eq!(&truncate_top_k(&t, k).unwrap(), &t);
        let t1 = truncate_top_k(&w, k + 1).unwrap();
        for (d, row) in t.iter() {
            let bigger: Vec<&str> = t1.shares(d).unwrap().iter().map(|(o, _)| o.as_str()).collect();
            for (o, _) in row {
                prop_assert!(bigger.contains(&o.as_str()));
            }
        }
    }

    #[test]
    fn distance_symmetric_and_triangle(
        a in (-80.0..80.0f64, -179.0..179.0f64),
        b in (-80.0..80.0f64, -179.0..179.0f64),
        c in (-80.0..80.0f64, -179.0..179.0f64),
    ) {
        let p = |x: (f64, f64)| Centroid::new("x", x.0, x.1).unwrap();
        let (pa, pb, pc) = (p(a), p(b), p(c));
        let ab = great_circle_distance(&pa, &pb);
        prop_assert!((ab - great_circle_distance(&pb, &pa)).abs() < 1e-9);
        prop_assert!(ab <= great_circle_distance(&pa, &pc) + great_circle_distance(&pc, &pb) + 1e-9);
    }
}

#[test]
fn distance_fixtures() {
    let o = Centroid::new("o", 0.0, 0.0).unwrap();
    assert_eq!(great_circle_distance(&o, &o), 0.0);
    let e = Centroid::new("e", 0.0, 1.0).unwrap();
    let arc = 6371.0 * std::f64::consts::PI / 180.0;
    assert!((great_circle_distance(&o, &e) - arc).abs() < 1e-9);
    assert!((great_circle_distance(&o, &e) - 111.19).abs() < 0.01);
}

#[test]
fn centroid_fixtures() {
    let one = population_weighted_centroid("z", &[(40.0, -75.0, 10.0)]).unwrap();
    assert_eq!((one.latitude, one.longitude), (40.0, -75.0));
    let eq = population_weighted_centroid("z", &[(0.0, 0.0, 5.0), (2.0, 2.0, 5.0)]).unwrap();
    assert!((eq.latitude - 1.0).abs() < 1e-15 && (eq.longitude - 1.0).abs() < 1e-15);
    let w = population_weighted_centroid("z", &[(0.0, 0.0, 1.0), (4.0, 0.0, 3.0)]).unwrap();
    assert!((w.latitude - 3.0).abs() < 1e-15 && w.longitude == 0.0);
    assert!(population_weighted_centroid("z", &[(1.0, 1.0, 0.0), (2.0, 2.0, 0.0)]).is_err());
}

struct Geo {
    pops: BTreeMap<String, f64>,
    centroids: BTreeMap<String, Centroid>,
}

fn geography(seed: u64, n: usize) -> Geo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pops = BTreeMap::new();
    let mut centroids = BTreeMap::new();
    for i in 0..n {
        let code = format!("z{i:03}");
        pops.insert(code.clone(), rng.random_range(2e4..2e6));
        centroids.insert(code.clone(), Centroid::new(code, rng.random_range(28.0..48.0), rng.random_range(-122.0..-70.0)).unwrap());
    }
    Geo { pops, centroids }
}

fn gravity_flows(geo: &Geo, m: &GravityModel, noise_sd: f64, seed: u64) -> FlowTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.max(1e-300)).unwrap();
    let mut rows = Vec::new();
    for (o, po) in &geo.pops {
        for (d, pd) in &geo.pops {
            if o == d {
                continue;
            }
            let dist = great_circle_distance(&geo.centroids[o], &geo.centroids[d]);
            let lf = m.intercept + m.pop_origin * po.ln() + m.pop_dest * pd.ln() + m.distance * dist.ln();
            let e = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            rows.push((o.clone(), d.clone(), (lf + e).exp()));
        }
    }
    FlowTable::new(rows).unwrap()
}

const TRUE: GravityModel = GravityModel { intercept: -6.0, pop_origin: 0.9, pop_dest: 0.7, distance: -1.3 };

#[test]
fn gravity_inverse_on_noiseless_flows() {
    let geo = geography(1, 25);
    let fit = fit_gravity(&gravity_flows(&geo, &TRUE, 0.0, 0), &geo.pops, &geo.centroids).unwrap();
    let m = fit.model;
    for (a, b) in [(m.intercept, TRUE.intercept), (m.pop_origin, TRUE.pop_origin), (m.pop_dest, TRUE.pop_dest), (m.distance, TRUE.distance)] {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert_eq!(fit.n_pairs, 25 * 24);
}

#[test]
fn doubling_flows_moves_only_intercept() {
    let geo = geography(2, 15);
    let f = gravity_flows(&geo, &TRUE, 0.3, 4);
    let doubled = FlowTable::new(f.iter().map(|(o, d, c)| (o.to_string(), d.to_string(), 2.0 * c))).unwrap();
    let a = fit_gravity(&f, &geo.pops, &geo.centroids).unwrap().model;
    let b = fit_gravity(&doubled, &geo.pops, &geo.centroids).unwrap().model;
    assert!((b.intercept - a.intercept - 2f64.ln()).abs() < 1e-9);
    assert!((b.pop_origin - a.pop_origin).abs() < 1e-9);
    assert!((b.pop_dest - a.pop_dest).abs() < 1e-9);
    assert!((b.distance - a.distance).abs() < 1e-9);
}

#[test]
fn distance_free_flows_give_flat_distance_elasticity() {
    let flat = GravityModel { distance: 0.0, ..TRUE };
    let mut outside = 0;
    for seed in 0..40 {
        let geo = geography(100 + seed, 20);
        let fit = fit_gravity(&gravity_flows(&geo, &flat, 0.5, seed), &geo.pops, &geo.centroids).unwrap();
        if fit.model.distance.abs() > 3.0 * fit.std_errors[3] {
            outside += 1;
        }
    }
    // about 0.3% expected beyond 3 SE
    assert!(outside <= 2, "{outside} of 40 beyond 3 SE");
}

#[test]
fn gravity_drops_zero_flows_and_needs_five_pairs() {
    let geo = geography(3, 4);
    let codes: Vec<&String> = geo.pops.keys().collect();
    let rows: Vec<(String, String, f64)> = vec![
        (codes[0].clone(), codes[1].clone(), 10.0),
        (codes[1].clone(), codes[0].clone(), 12.0),
        (codes[2].clone(), codes[0].clone(), 0.0),
        (codes[0].clone(), codes[0].clone(), 99.0),
    ];
    assert!(matches!(
        fit_gravity(&FlowTable::new(rows).unwrap(), &geo.pops, &geo.centroids),
        Err(CoreError::InsufficientData(_))
    ));
    let mut f = gravity_flows(&geo, &TRUE, 0.1, 1).iter().map(|(o, d, c)| (o.to_string(), d.to_string(), c)).collect::<Vec<_>>();
    f[0].2 = 0.0;
    let fit = fit_gravity(&FlowTable::new(f).unwrap(), &geo.pops, &geo.centroids).unwrap();
    assert_eq!(fit.zero_flows_dropped, 1);
    assert_eq!(fit.n_pairs, 11);
}

#[test]
fn predicted_share_fixtures() {
    // two identical origins equidistant from d
    let pops: BTreeMap<String, f64> = [("a", 1e5), ("b", 1e5), ("d", 3e5)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let centroids: BTreeMap<String, Centroid> = [("a", 1.0, 0.0), ("b", -1.0, 0.0), ("d", 0.0, 0.0)]
        .iter()
        .map(|(k, la, lo)| (k.to_string(), Centroid::new(*k, *la, *lo).unwrap()))
        .collect();
    let w = predict_gravity_shares(&TRUE, &pops, &centroids).unwrap();
    let s = w.shares("d").unwrap();
    assert!((s[0].1 - 0.5).abs() < 1e-12 && (s[1].1 - 0.5).abs() < 1e-12);

    let geo = geography(5, 12);
    let w = predict_gravity_shares(&GravityModel { pop_origin: 0.0, distance: 0.0, ..TRUE }, &geo.pops, &geo.centroids).unwrap();
    for (_, row) in w.iter() {
        assert_eq!(row.len(), 11);
        assert!(row.iter().all(|(_, s)| (s - 1.0 / 11.0).abs() < 1e-12));
    }
}

#[test]
fn predicted_shares_match_hand_recomputation() {
    let geo = geography(6, 15);
    let w = predict_gravity_shares(&TRUE, &geo.pops, &geo.centroids).unwrap();
    assert!(row_sums_ok(&w));
    for (d, row) in w.iter() {
        let mass = |o: &str| geo.pops[o].powf(TRUE.pop_origin) * great_circle_distance(&geo.centroids[o], &geo.centroids[d]).powf(TRUE.distance);
        let total: f64 = geo.pops.keys().filter(|o| *o != d).map(|o| mass(o)).sum();
        for (o, s) in row {
            assert!((s - mass(o) / total).abs() < 1e-12);
        }
    }
}
