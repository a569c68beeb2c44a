//! Online bilevel optimization: differentiable inner SGD steps on the
//! classifier weights, truncated hypergradients for the augmenter weights,
//! and the outer optimizer.

mod config;
mod engine;
mod outer;
mod window;

use thiserror::Error;

use crate::nn::NnError;
use crate::tensor::TensorError;
use crate::vision::VisionError;

pub use config::{HypergradConfig, OuterOptimizerKind};
pub use engine::{
    full_unroll_hypergrad, hypergrad_truncated, inner_step, sgd_reference_step, TrainState,
};
pub use outer::{clip_global_norm, OuterOptimizer};
pub use window::{StepRecord, UnrollWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilevelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Vision(#[from] VisionError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("non-finite training loss at inner step {step}")]
    NonFiniteLoss { step: usize },

    #[error("unroll window is empty")]
    EmptyWindow,

    #[error("validation batch is empty")]
    EmptyValidation,

    #[error("window record from step {step} was built with different augmenter weights")]
    StaleTheta { step: usize },

    #[error("unroll exceeded the memory guard of {limit} live nodes")]
    MemoryGuard { limit: usize },

    #[error("invalid hypergradient config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, BilevelError>;
