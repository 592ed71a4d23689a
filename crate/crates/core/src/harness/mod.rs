//! Metrics, experiment orchestration, checkpoints and reports.

mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod pipeline;
mod report;

pub use checkpoint::{Checkpoint, CheckpointTrailer, CHECKPOINT_MAGIC};
pub use config::{DatasetRef, ExperimentConfig};
pub use experiment::{
    append_results, read_results, run_experiment, write_run, ExperimentRecord, ExperimentRun, RepFailure, RunFiles,
    RESULTS_COLUMNS,
};
pub use metrics::{accuracy, auc, ci95, MetricError};
pub use pipeline::{encoder_from_checkpoint, load_dataset, pretrain_checkpoint, Pipeline};
pub use report::{emit_report, parse_percent_cell, pca_2d, pair_projection, percent_cell, Projection, ReportContext, ReportLayout};

use std::path::Path;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::defense::DefenseError;
use crate::encoder::EncoderError;
use crate::graphdata::GraphError;
use crate::numcore::NumError;
use crate::pretrain::PretrainError;
use crate::prompt::PromptError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("results file: {0}")]
    Results(String),
    #[error("no records to report")]
    EmptyRecords,
    #[error("all {} repetitions failed; first error: {}", .0.len(), .0.first().map(|f| f.error.as_str()).unwrap_or("none"))]
    AllRepetitionsFailed(Vec<RepFailure>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Num(#[from] NumError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
