//! Synthetic tasks, the training loop, evaluation, and the command-line
//! interface: everything needed to exercise the joint model and the
//! character-input translation model end to end at desk scale.

pub mod cli;
pub mod data;
pub mod eval;
pub mod gen;
pub mod train;
pub mod vocab;

pub use data::{Dataset, DatasetRecord, Frames, Split};
pub use eval::{evaluate, evaluate_mt, recover_permutation, MtReport, Report};
pub use gen::{gen_conversation, gen_toy_asr, gen_toy_reorder_mt, MtMode};
pub use train::{train, mean_st_loss, steps_to_reach, OptimConfig, RunConfig, Task, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Decode(#[from] crate::decode::DecodeError),
    #[error(transparent)]
    Num(#[from] crate::numcore::NumError),
    #[error(transparent)]
    Sot(#[from] crate::sot::SotError),
    #[error(transparent)]
    Rnnt(#[from] crate::rnnt::RnntError),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("model vocabulary of {model} does not match the dataset vocabulary of {dataset}")]
    VocabMismatch { model: usize, dataset: usize },
}

pub type Result<T> = std::result::Result<T, HarnessError>;
