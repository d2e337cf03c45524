//! Simulation experiments comparing selection-adjusted and naive inference.

mod config;
mod experiment;
mod metrics;
mod output;

pub use config::{ExperimentConfig, FormulationChoice, ModelSpec, QuerySpec, RiskAggregation, SamplerSettings};
pub use experiment::{
    normalized_design, run_experiment, run_two_stage_experiment, target_ols, ExperimentReport, MethodTrial, MetricsTable,
    TrialRecord, TrialStatus,
};
pub use metrics::{fcr, MethodMetrics};
pub use output::{config_hash, write_outputs};
