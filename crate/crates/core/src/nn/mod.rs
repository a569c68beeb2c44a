//! Augmenter networks mapping noise to transformation parameters, and the
//! classifiers they train against.

mod augmenter;
mod classifier;
mod init;
mod params;

use thiserror::Error;

use crate::tensor::TensorError;
use crate::vision::VisionError;

pub use augmenter::{
    augmenter_forward, sample_noise, AugmentKind, AugmenterOutput, AugmenterSize, AugmenterSpec,
    ParamBounds,
};
pub use classifier::{classifier_forward, ClassifierArch, ClassifierSpec};
pub use init::{glorot_limit, init_augmenter, init_classifier};
pub use params::ParamSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Vision(#[from] VisionError),

    #[error("{0}")]
    Shape(String),

    #[error("invalid network spec: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
