//! Experiment configuration, the training loop for every comparison mode,
//! metrics, run directories and cross-run summaries.

mod config;
mod metrics;
mod run;
mod summarize;
mod train;

use thiserror::Error;

use crate::bilevel::BilevelError;
use crate::data::DataError;
use crate::nn::NnError;
use crate::tensor::TensorError;
use crate::vision::VisionError;

pub use config::{ExperimentConfig, FlipConfig, MagnitudeTarget, Mode, PredefinedRanges};
pub use metrics::{metrics_csv, MetricsRecord, METRICS_HEADER, METRICS_SCHEMA_VERSION};
pub use run::{load_summary, run_experiment, run_to_dir, GridResult, RunSummary};
pub use summarize::{summarize, SummaryRow, SummaryTable};
pub use train::{evaluate, train, TrainOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Bilevel(#[from] BilevelError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Vision(#[from] VisionError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("summarize: {0}")]
    Summary(String),
}

impl ExperimentError {
    /// True for problems detected before any work is done.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Json(_))
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
