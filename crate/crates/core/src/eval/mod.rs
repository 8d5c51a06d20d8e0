//! Cross-validation, metrics, failure analyses and report output.

pub mod cnn;
pub mod cv;
pub mod failure;
pub mod metrics;
pub mod report;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::nn::NnError;

pub use cnn::{BandScaler, CnnLearner, FittedCnn, TargetScale};
pub use cv::{cross_validate, CvConfig, EvalReport, ExampleResult, FoldGrouping, FoldResult, Learner, Split};
pub use failure::{failure_analysis, FailureAnalysis, VideoSummary};
pub use metrics::{argmax2, f1, rmse, Confusion};
pub use report::{report_text, write_report};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("fold {0} has no examples")]
    EmptyFold(u8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("learner returned {got} predictions for {expected} test examples")]
    PredictionCount { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
