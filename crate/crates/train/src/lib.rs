//! Optimization harness: Adam under a triangular cyclic learning rate, the
//! epoch loop with best-validation snapshots and resumable checkpoints, and
//! the glue that turns annotated cases into training samples and trained
//! parameters into a landmark predictor.

pub mod config;
pub mod dataset;
pub mod desk;
pub mod optim;
pub mod predictor;
pub mod trainer;

use thiserror::Error;

pub use config::TrainConfig;
pub use dataset::{prepare_samples, Sample};
pub use optim::{adam_step, cyclic_lr, AdamState};
pub use predictor::NetPredictor;
pub use trainer::{train, EpochRecord, TrainOptions, TrainOutcome, TrainState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: u64, what: String },
    #[error(transparent)]
    Nn(#[from] pnl_nnet::NnError),
    #[error(transparent)]
    Imaging(#[from] pnl_core::imaging::ImagingError),
    #[error(transparent)]
    Data(#[from] pnl_core::data::DataError),
    #[error(transparent)]
    Eval(#[from] pnl_core::evaluation::EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
