//! Mortgage-payment wedges, migration networks and the exposure measures
//! built from them.

pub mod bartik;
pub mod error;
pub mod exposure;
pub mod leaveout;
pub mod mortgage;
pub mod network;

pub use bartik::{bin_positive_terciles, build_bartik, BartikBin, BartikCell};
pub use error::{CoreError, Result};
pub use exposure::{
    build_mpw, build_predicted_wop, build_wop, centered_p_value, offset_ratio, permute_wop, replication_seed,
    variance_decomposition, ExposureRow, ExposureTable, MissingOriginPolicy, VarianceDecomposition, WopResult,
    DEFAULT_E_BAR,
};
pub use leaveout::{aggregate_to_cz, fips_state, lender_leaveout_payments, LeaveOutOptions, LeaveOutResult, LenderPricePosition};
pub use mortgage::{
    compute_p_new, compute_p_old, fit_pricing_model, monthly_payment, normalized_payment, present_value_of_wedge,
    LoanRecord, LoanSet, PaymentAggregate, PaymentDiagnostics, PaymentSummary, PricingModel,
};
pub use network::{
    apply_crosswalk, fit_gravity, great_circle_distance, normalize_in_shares, population_weighted_centroid,
    predict_gravity_shares, top_k_coverage, truncate_top_k, Centroid, Crosswalk, CrosswalkResult, FlowTable,
    GravityFit, GravityModel, WeightMatrix,
};
