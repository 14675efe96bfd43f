//! Command-line entry points and the HTTP backend of the review tool.

pub mod api;
pub mod commands;
pub mod store;
pub mod verdict;

use thiserror::Error;

pub use api::{router, AppState, LoadedModel};
pub use store::{AnnotationEntry, AnnotationStore};
pub use verdict::{handle_verdict, VerdictRequest, VerdictResponse};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("stale revision for {case_id}: current {current}, request based on {expected}")]
    Conflict { case_id: String, current: u64, expected: u64 },
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
    #[error("no model loaded")]
    NoModel,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] pnl_core::data::DataError),
    #[error(transparent)]
    Imaging(#[from] pnl_core::imaging::ImagingError),
    #[error(transparent)]
    Eval(#[from] pnl_core::evaluation::EvalError),
    #[error(transparent)]
    Train(#[from] pnl_train::TrainError),
    #[error(transparent)]
    Nn(#[from] pnl_nnet::NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
