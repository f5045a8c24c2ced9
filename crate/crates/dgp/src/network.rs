//! Gravity-consistent migration flows between commuting zones, split to
//! county pairs in proportion to county population.

use std::collections::BTreeMap;

use lockin_core::{great_circle_distance, FlowTable};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::DgpConfig;
use crate::error::Result;
use crate::geography::Geography;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWorld {
    /// CZ-level flows, origin ≠ destination, feeders only.
    pub cz_flows: FlowTable,
    /// The same flows split across county pairs.
    pub county_flows: FlowTable,
}

pub fn generate_network(config: &DgpConfig, geo: &Geography, rng: &mut ChaCha8Rng) -> Result<NetworkWorld> {
    let [b0, b1, b2, b3] = config.gravity;
    let mut counties_of: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for c in &geo.counties {
        counties_of.entry(c.cz.as_str()).or_default().push((c.code.as_str(), c.population));
    }
    let mut cz_rows = Vec::new();
    let mut county_rows = Vec::new();
    for d in &geo.cz_codes {
        let cd = &geo.centroids[d];
        let mut by_distance: Vec<(f64, &String)> = geo
            .cz_codes
            .iter()
            .filter(|o| *o != d)
            .map(|o| (great_circle_distance(&geo.centroids[o], cd), o))
            .collect();
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        for &(dist, o) in by_distance.iter().take(config.feeders_per_destination) {
            let (po, pd) = (geo.populations[o], geo.populations[d]);
            let z: f64 = StandardNormal.sample(rng);
            let log_flow = b0 + b1 * po.ln() + b2 * pd.ln() + b3 * dist.ln() + config.flow_noise * z;
            let flow = log_flow.exp();
            cz_rows.push((o.clone(), d.clone(), flow));
            for &(oc, op) in &counties_of[o.as_str()] {
                for &(dc, dp) in &counties_of[d.as_str()] {
                    county_rows.push((oc.to_string(), dc.to_string(), flow * (op / po) * (dp / pd)));
                }
            }
        }
    }
    Ok(NetworkWorld { cz_flows: FlowTable::new(cz_rows)?, county_flows: FlowTable::new(county_rows)? })
}
