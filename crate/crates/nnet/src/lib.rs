//! Landmark regressor: a small reverse-mode autodiff engine, UNet variants
//! with CoordConv input augmentation and attention-gated skips, and a
//! versioned parameter file format.

pub mod graph;
pub mod io;
pub mod model;
pub mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use graph::{add_coord_channels, ExecMode, Graph, Gradients, Var};
pub use io::{load_params, save_params};
pub use model::{attention_gate, forward, init_params, AttentionForm, ModelConfig, Variant};
pub use tensor::Tensor;

/// Named parameters, iterated in lexicographic order.
pub type ParamStore = BTreeMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter {0} holds a value that is not exactly representable as f32")]
    NotF32(String),
    #[error("parameter file was written for a different model config")]
    ConfigMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
