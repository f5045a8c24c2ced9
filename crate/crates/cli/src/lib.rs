//! Config-driven pipeline from loan, flow and panel files to exposure
//! tables, estimates, event-study points, placebo draws and offset ratios.

pub mod config;
pub mod error;
pub mod format;
pub mod ingest;
pub mod output;
pub mod pipeline;
pub mod synthetic;

pub use config::{default_models, ModelConfig, Overrides, PanelKind, RunConfig, OUT_DIR_ENV};
pub use error::{CliError, Result};
pub use ingest::{ingest, read_event_study, read_exposure, TableSummary, Tables};
pub use output::{write_artifacts, EstimateRow, EventStudyPoint, OUTPUT_FILES};
pub use pipeline::{run_pipeline, RunOutput, Scope};
pub use synthetic::{tables_from_world, write_world};
