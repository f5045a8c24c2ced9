//! Synthetic worlds with known parameters: geography, lenders and loans,
//! migration flows, true exposures and outcome panels.
//!
//! Each component draws from its own ChaCha8 stream of the master seed, so a
//! world is a pure function of its config.

pub mod config;
pub mod error;
pub mod geography;
pub mod loans;
pub mod network;
pub mod panel;
pub mod truth;
pub mod world;

pub use config::DgpConfig;
pub use error::{DgpError, Result};
pub use geography::{generate_geography, County, Geography};
pub use loans::{annuity_payment, generate_loans, rate_for_payment, Lender, LoanWorld, ShockLoanTruth};
pub use network::{generate_network, NetworkWorld};
pub use panel::{attach_true_exposures, generate_bartik, generate_panel, generate_soc_panel, soc_code, BartikInputs};
pub use truth::{true_exposures, TrueExposure};
pub use world::{generate_world, stream_rng, Stream, SyntheticWorld, TrueParameters};
