//! True exposures computed from the latent loan values with plain loops,
//! independent of the library routines they are used to check.

use std::collections::BTreeMap;

use lockin_core::FlowTable;

use crate::loans::{annuity_payment, ShockLoanTruth};

#[derive(Debug, Clone, PartialEq)]
pub struct TrueExposure {
    pub p_new: f64,
    pub p_old: f64,
    pub wop: f64,
    pub mpw: f64,
    /// Feeder-weighted local price field, the confounder behind WOP.
    pub feeder_local: f64,
    /// Feeder-weighted lender positions.
    pub feeder_lender: f64,
}

pub fn true_exposures(shock: &[ShockLoanTruth], cz_flows: &FlowTable) -> BTreeMap<String, TrueExposure> {
    // (n, Σ old payment, Σ new payment, Σ local, Σ lender)
    let mut acc: BTreeMap<&str, (f64, f64, f64, f64, f64)> = BTreeMap::new();
    for l in shock {
        let e = acc.entry(l.cz.as_str()).or_default();
        e.0 += 1.0;
        e.1 += l.old_payment;
        e.2 += annuity_payment(l.new_rate.max(0.0));
        e.3 += l.local_shift;
        e.4 += l.lender_position;
    }
    let origin: BTreeMap<&str, (f64, f64, f64, f64)> =
        acc.iter().map(|(cz, e)| (*cz, (e.1 / e.0, e.2 / e.0, e.3 / e.0, e.4 / e.0))).collect();

    let mut inflow: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for (o, d, f) in cz_flows.iter() {
        if o != d && f > 0.0 {
            inflow.entry(d).or_default().push((o, f));
        }
    }
    let mut out = BTreeMap::new();
    for (d, feeders) in inflow {
        let Some(&(_, p_new, _, _)) = origin.get(d) else { continue };
        let total: f64 = feeders.iter().map(|(_, f)| f).sum();
        let (mut wop, mut local, mut lender) = (0.0, 0.0, 0.0);
        for (o, f) in feeders {
            let (p_old, _, loc, len) = origin[o];
            wop += f / total * p_old;
            local += f / total * loc;
            lender += f / total * len;
        }
        out.insert(
            d.to_string(),
            TrueExposure { p_new, p_old: origin[d].0, wop, mpw: p_new - wop, feeder_local: local, feeder_lender: lender },
        );
    }
    out
}
