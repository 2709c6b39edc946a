//! Experiment runner: repeated delivery episodes with online learning of the
//! feedback profile, the autonomy levels and, optionally, the feature space.

mod config;
mod episode;
mod experiment;
mod metrics;

pub use self::config::{ConfigError, ExperimentConfig, Mode};
pub use self::episode::{run_episode, CostModel, EpisodeResult, EpisodeSetup, World};
pub use self::experiment::{load_world, run_experiment, run_trial, ExperimentOutput, Truth, TruthCache};
pub use self::metrics::{
    aggregates_csv, emit, final_window_mean, mean_stderr, metrics_csv, read_metrics, refinements_log, summary,
    MetricsRow, METRICS_HEADER,
};

use thiserror::Error;

use crate::campus::{DomainError, MapError, OracleError, TaskError};
use crate::cas::CasError;
use crate::feedback::FeedbackError;
use crate::refinement::RefineError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("map: {0}")]
    Map(#[from] MapError),
    #[error("task: {0}")]
    Task(#[from] TaskError),
    #[error("domain: {0}")]
    Domain(#[from] DomainError),
    #[error("planner: {0}")]
    Cas(#[from] CasError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("refinement: {0}")]
    Refine(#[from] RefineError),
    #[error("feedback: {0}")]
    Feedback(#[from] FeedbackError),
    #[error("{0}")]
    Io(String),
    #[error("trial {trial}, episode {episode}: {source}")]
    At { trial: usize, episode: usize, source: Box<HarnessError> },
}
