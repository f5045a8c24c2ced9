use std::collections::BTreeMap;

use lockin_core::{BartikCell, Centroid, Crosswalk, FlowTable, LoanSet};
use lockin_panel::PanelDataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::DgpConfig;
use crate::error::Result;
use crate::geography::{generate_geography, County};
use crate::loans::{generate_loans, Lender, ShockLoanTruth};
use crate::network::generate_network;
use crate::panel::{generate_bartik, generate_panel, generate_soc_panel, BartikInputs};
use crate::truth::{true_exposures, TrueExposure};

/// Independent random streams, one per component, so that changing how one
/// component draws leaves the others untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Geography = 1,
    Loans = 2,
    Network = 3,
    Panel = 4,
    Bartik = 5,
    SocPanel = 6,
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameters {
    pub beta_migration: f64,
    pub theta_h1b: f64,
    pub triple: f64,
    pub gravity: [f64; 4],
    pub dispersion: f64,
    pub endogeneity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: DgpConfig,
    pub counties: Vec<County>,
    pub cz_codes: Vec<String>,
    pub centroids: BTreeMap<String, Centroid>,
    pub populations: BTreeMap<String, f64>,
    pub crosswalk_rows: Vec<(String, String, f64)>,
    pub loans: LoanSet,
    pub lenders: Vec<Lender>,
    pub shock_truth: Vec<ShockLoanTruth>,
    pub cz_flows: FlowTable,
    pub county_flows: FlowTable,
    pub exposures: BTreeMap<String, TrueExposure>,
    pub bartik: BartikInputs,
    pub panel: PanelDataset,
    pub soc_panel: PanelDataset,
    pub truth: TrueParameters,
}

impl SyntheticWorld {
    pub fn crosswalk(&self) -> Result<Crosswalk> {
        Ok(Crosswalk::new(self.crosswalk_rows.iter().cloned())?)
    }

    pub fn cz_map(&self) -> BTreeMap<String, String> {
        self.counties.iter().map(|c| (c.code.clone(), c.cz.clone())).collect()
    }

    pub fn bartik_cells(&self) -> &[BartikCell] {
        &self.bartik.cells
    }
}

pub fn generate_world(config: &DgpConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let seed = config.master_seed;
    let geo = generate_geography(config, &mut stream_rng(seed, Stream::Geography))?;
    let loans = generate_loans(config, &geo, &mut stream_rng(seed, Stream::Loans))?;
    let network = generate_network(config, &geo, &mut stream_rng(seed, Stream::Network))?;
    let exposures = true_exposures(&loans.shock_truth, &network.cz_flows);
    let panel = generate_panel(config, &exposures, &geo.populations, &mut stream_rng(seed, Stream::Panel))?;
    let bartik = generate_bartik(config, &geo.cz_codes, &mut stream_rng(seed, Stream::Bartik))?;
    let soc_panel = generate_soc_panel(config, &exposures, &bartik.cells, &mut stream_rng(seed, Stream::SocPanel))?;
    let crosswalk_rows = geo.counties.iter().map(|c| (c.code.clone(), c.cz.clone(), 1.0)).collect();
    Ok(SyntheticWorld {
        config: config.clone(),
        counties: geo.counties,
        cz_codes: geo.cz_codes,
        centroids: geo.centroids,
        populations: geo.populations,
        crosswalk_rows,
        loans: loans.loans,
        lenders: loans.lenders,
        shock_truth: loans.shock_truth,
        cz_flows: network.cz_flows,
        county_flows: network.county_flows,
        exposures,
        bartik,
        panel,
        soc_panel,
        truth: TrueParameters {
            beta_migration: config.true_beta_migration,
            theta_h1b: config.true_theta_h1b,
            triple: config.true_triple,
            gravity: config.gravity,
            dispersion: config.dispersion,
            endogeneity: config.endogeneity,
        },
    })
}
