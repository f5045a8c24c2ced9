//! Commuting zones on a jittered lat/lon grid, counties scattered around
//! each zone, and states formed from runs of consecutive zones.

use std::collections::BTreeMap;

use lockin_core::{population_weighted_centroid, Centroid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::DgpConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct County {
    /// Five-digit code: two-digit state then three-digit county.
    pub code: String,
    pub cz: String,
    pub latitude: f64,
    pub longitude: f64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geography {
    pub counties: Vec<County>,
    pub cz_codes: Vec<String>,
    pub centroids: BTreeMap<String, Centroid>,
    pub populations: BTreeMap<String, f64>,
}

impl Geography {
    pub fn cz_map(&self) -> BTreeMap<String, String> {
        self.counties.iter().map(|c| (c.code.clone(), c.cz.clone())).collect()
    }
}

pub fn cz_code(i: usize) -> String {
    format!("cz{i:03}")
}

pub fn generate_geography(config: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<Geography> {
    let n = config.n_cz;
    let cols = ((2 * n) as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (lat0, lat1, lon0, lon1) = (30.0, 47.0, -120.0, -75.0);
    let dlat = (lat1 - lat0) / rows.max(1) as f64;
    let dlon = (lon1 - lon0) / cols as f64;
    let log_pop: Normal<f64> = Normal::new(11.0, 0.8).expect("valid normal");

    let mut counties = Vec::with_capacity(n * config.n_counties_per_cz);
    let mut cz_codes = Vec::with_capacity(n);
    let mut centroids = BTreeMap::new();
    let mut populations = BTreeMap::new();
    let mut next_in_state = vec![0usize; config.n_states()];
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        let lat = lat0 + (r as f64 + 0.5) * dlat + rng.random_range(-0.2..0.2) * dlat;
        let lon = lon0 + (c as f64 + 0.5) * dlon + rng.random_range(-0.2..0.2) * dlon;
        let cz = cz_code(i);
        let state = i / config.cz_per_state;
        let mut parts = Vec::with_capacity(config.n_counties_per_cz);
        for _ in 0..config.n_counties_per_cz {
            next_in_state[state] += 1;
            let county = County {
                code: format!("{:02}{:03}", state + 1, next_in_state[state]),
                cz: cz.clone(),
                latitude: lat + rng.random_range(-0.25..0.25) * dlat,
                longitude: lon + rng.random_range(-0.25..0.25) * dlon,
                population: log_pop.sample(rng).exp().round().max(1000.0),
            };
            parts.push((county.latitude, county.longitude, county.population));
            counties.push(county);
        }
        centroids.insert(cz.clone(), population_weighted_centroid(&cz, &parts)?);
        populations.insert(cz.clone(), parts.iter().map(|p| p.2).sum());
        cz_codes.push(cz);
    }
    Ok(Geography { counties, cz_codes, centroids, populations })
}
