//! Synthetic experiments: data generation, distribution shift, training every
//! method over several seeds, aggregation and report artifacts.

mod artifacts;
mod data;
mod experiment;
mod recipe;

pub use artifacts::{emit_artifacts, summary_markdown, SummaryRow, PERCENT_METRICS};
pub use data::{
    apply_shift, generate, Generator, GeneratorConfig, ShiftKind, ShiftSpec, SyntheticDataset, MIN_CLASS_STD,
    MIXTURE_RADIUS, NOISE_PER_LEVEL,
};
pub use experiment::{
    aggregate, compare_methods, load_seed_results, metric_entries, run_experiment, run_seed, sharpness_probe,
    AggregateReport, Comparison, Experiment, MethodAggregate, MethodRun, MetricSummary, RunFailure, SeedOutput,
    SeedResult, SeverityAggregate, ShiftedReport, METRIC_NAMES,
};
pub use recipe::{Method, TrainRecipe, TOY_BATCH_SIZE, TOY_RHO};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::nnkit::NnError;
use crate::optim::OptimError;
use crate::posthoc::PosthocError;
use crate::scores::ScoresError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("recipe: {0}")]
    Recipe(String),
    #[error("unknown shift kind `{0}`")]
    UnknownShift(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("method `{0}` is not in the report")]
    MissingMethod(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("run directory: {0}")]
    Runs(String),
    #[error(transparent)]
    Scores(#[from] ScoresError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Posthoc(#[from] PosthocError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
