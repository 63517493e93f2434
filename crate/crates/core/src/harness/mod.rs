//! Optimization, evaluation and gradient verification.

mod adam;
mod config;
mod gradcheck;
mod metrics;
mod schedule;
mod train;

use thiserror::Error;

use crate::data::DataError;
use crate::keypatch::KeypatchError;
use crate::loss::LossError;
use crate::model::ModelError;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::{parse_key_values, RunConfig};
pub use gradcheck::{
    compare_gradients, gradcheck, gradcheck_batch, relative_error, GradcheckConfig, GradcheckReport, ParamCheck, ERROR_FLOOR,
};
pub use metrics::{
    evaluate, evaluate_predictions, metrics, overlap, predict_all, EvalReport, Overlap, SampleScore, DEFAULT_THRESHOLD,
};
pub use schedule::PlateauSchedule;
pub use train::{
    batch_loss_and_grad, mean_seg_loss, prepare, sample_loss_and_grad, train, write_log, EpochRecord, Prepared, StepRecord,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Keypatch(#[from] KeypatchError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite gradient in {path}")]
    NonFiniteGradient { path: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
