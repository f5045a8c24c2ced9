use std::collections::BTreeMap;

use lockin_core::{bin_positive_terciles, build_bartik, BartikBin};
use proptest::prelude::*;

fn shares(rows: &[(&str, &str, f64)]) -> BTreeMap<(String, String), f64> {
    rows.iter().map(|(c, s, v)| ((c.to_string(), s.to_string()), *v)).collect()
}

fn emp(rows: &[(&str, i32, f64)]) -> BTreeMap<(String, i32), f64> {
    rows.iter().map(|(s, y, v)| ((s.to_string(), *y), *v)).collect()
}

#[test]
fn flat_employment_gives_zero_shocks() {
    let sh = shares(&[("z1", "11", 0.2), ("z2", "11", 0.4)]);
    let e = emp(&[("11", 2017, 1000.0), ("11", 2018, 1000.0), ("11", 2019, 1000.0), ("11", 2020, 1000.0)]);
    let b = build_bartik(&sh, &e, &[2017, 2018, 2019]).unwrap();
    assert_eq!(b.len(), 8);
    assert!(b.iter().all(|c| c.b.abs() < 1e-12));
}

#[test]
fn raw_shock_arithmetic() {
    // one cell above a flat baseline: 100 * 0.10 * 0.05 = 0.5 pp before demeaning
    let base = 1000.0_f64;
    let sh = shares(&[("z1", "15", 0.10)]);
    let e = emp(&[("15", 2018, base), ("15", 2019, base), ("15", 2023, base * 0.05f64.exp())]);
    let b = build_bartik(&sh, &e, &[2018, 2019]).unwrap();
    let mean = 0.5 / 3.0;
    let c2023 = b.iter().find(|c| c.year == 2023).unwrap();
    assert!((c2023.b - (0.5 - mean)).abs() < 1e-12);
    assert!((b.iter().find(|c| c.year == 2018).unwrap().b + mean).abs() < 1e-12);
}

#[test]
fn zero_employment_rejected() {
    let sh = shares(&[("z1", "15", 0.1)]);
    assert!(build_bartik(&sh, &emp(&[("15", 2018, 0.0)]), &[2018]).is_err());
    assert!(build_bartik(&sh, &emp(&[("15", 2019, 5.0)]), &[2018]).is_err());
}

proptest! {
    #[test]
    fn demeaned_panel_mean_is_zero(
        s in prop::collection::vec(0.0..1.0f64, 6),
        g in prop::collection::vec(100.0..1e6f64, 10),
    ) {
        let mut sh = BTreeMap::new();
        for (i, v) in s.iter().enumerate() {
            sh.insert((format!("z{}", i / 2), format!("s{}", i % 2)), *v);
        }
        let mut e = BTreeMap::new();
        for (i, v) in g.iter().enumerate() {
            e.insert((format!("s{}", i % 2), 2015 + (i / 2) as i32), *v);
        }
        let b = build_bartik(&sh, &e, &[2015, 2016]).unwrap();
        let mean = b.iter().map(|c| c.b).sum::<f64>() / b.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        let bins = bin_positive_terciles(&b.iter().map(|c| c.b).collect::<Vec<_>>());
        prop_assert_eq!(bins.len(), b.len());
    }

    #[test]
    fn bins_are_ordered(v in prop::collection::vec(-5.0..5.0f64, 1..60)) {
        let bins = bin_positive_terciles(&v);
        for (a, ba) in v.iter().zip(&bins) {
            prop_assert_eq!(*a <= 0.0, *ba == BartikBin::NonPositive);
            for (b, bb) in v.iter().zip(&bins) {
                if a < b {
                    prop_assert!(ba <= bb);
                }
            }
        }
    }
}

#[test]
fn tercile_fixtures() {
    assert!(bin_positive_terciles(&[-1.0, 0.0, -3.0]).iter().all(|b| *b == BartikBin::NonPositive));
    let v: Vec<f64> = (1..=9).map(f64::from).collect();
    let bins = bin_positive_terciles(&v);
    use BartikBin::*;
    assert_eq!(bins, vec![Low, Low, Low, Mid, Mid, Mid, High, High, High]);
    assert_eq!(bin_positive_terciles(&[0.7, 0.2, 1.4, -0.1]), vec![Mid, Low, High, NonPositive]);
    // a value equal to the cut stays in the lower bin
    assert_eq!(bin_positive_terciles(&[1.0, 1.0, 1.0, 2.0]), vec![Low, Low, Low, High]);
}
