//! Training loop, evaluation, metrics and patient-wise cross-validation.

pub mod config;
pub mod crossval;
pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod trainer;

pub use config::{OptimizerKind, TrainConfig};
pub use crossval::{cross_validate, run_fold, CrossValOutcome, FoldResult, Trained};
pub use eval::{eval_frames, evaluate, predict_clips};
pub use metrics::{
    confusion_csv, confusion_matrix, per_class_prf, weighted_prf, ConfusionMatrix, CrossValReport, MetricSummary,
    MetricsReport,
};
pub use trainer::{train, train_from, uses_feature_bank, EpochStats, FeatureBank, TrainOutcome};
pub use experiment::{median, nearest_template, run_experiment, ExperimentConfig, ExperimentReport, SeedOutcome};
