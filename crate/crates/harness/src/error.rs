use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Core(#[from] latentseg::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report error: {0}")]
    Report(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
