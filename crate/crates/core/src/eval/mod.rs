//! Joint goal and per-slot accuracy, evaluation reports and ablation runners.

mod ablation;
mod metrics;

use thiserror::Error;

use crate::tracker::ModelError;
use crate::training::TrainError;

pub use ablation::{
    detect_oov_slots, median, run_sharing_comparison, run_svd_ablation, AblationRow, AblationTable, SharingRow, SharingTable,
};
pub use metrics::{
    evaluate, joint_goal_accuracy, per_slot_accuracy, predict_corpus, score, slot_matches, EvalReport, ReportConfig,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predicted} predicted turns but {gold} gold turns")]
    ShapeMismatch { predicted: usize, gold: usize },
    #[error("model slots {model:?} differ from corpus schema {corpus:?}")]
    SchemaMismatch { model: Vec<String>, corpus: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("invalid ablation grid: {0}")]
    Grid(String),
}
