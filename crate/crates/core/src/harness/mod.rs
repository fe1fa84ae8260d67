//! Experiment orchestration: config ingestion, the round loop and metrics
//! output.

mod config;
mod metrics;
mod run;

pub use config::{
    parse_config, AggregatorKind, DatasetConfig, EpisodeConfig, ExperimentConfig, MaliciousConfig, ModelConfig,
    Overrides, TriggerConfig,
};
pub use metrics::{
    metrics_csv, parse_metrics_csv, rounds_to_threshold, summary_json, write_metrics, MetricsFiles, MetricsRow,
    SummaryOptions,
};
pub use run::{backdoor_accuracy, run_experiment, ExperimentOutcome, TriggerColumn};
