use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stiffness failure at t = {time}: step {step:e} fell below the floor {floor:e} in cell {cell}")]
    Stiffness {
        time: f64,
        step: f64,
        floor: f64,
        cell: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("mismatched runs: {0}")]
    Mismatch(String),

    #[error("moment of order {0} was not recorded")]
    MissingMoment(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
