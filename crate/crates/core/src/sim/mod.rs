//! The round loop: scenario configuration, orchestration and metrics.

pub mod config;
pub mod metrics;
mod runner;

pub use config::{DelayParams, ScenarioConfig, Topology};
pub use metrics::{detection_rate, oscillation, round_delay, Detection, RoundComposition, RoundMetrics};
pub use runner::{run_scenario, run_scenario_with_threads, RunInfo, RunMetadata, ScenarioRun, Simulation};
