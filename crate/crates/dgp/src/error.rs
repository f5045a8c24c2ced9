use lockin_core::CoreError;
use lockin_panel::EstimationError;

#[derive(Debug, thiserror::Error)]
pub enum DgpError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Panel(#[from] EstimationError),
}

pub type Result<T> = std::result::Result<T, DgpError>;
