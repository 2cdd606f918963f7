//! Scenario files, application traffic, metrics and end-to-end runs.

mod config;
mod flow;
pub mod metrics;
mod plot;
mod run;

pub use config::{load_scenario, parse_scenario, ConfigError, FlowConfig, MetricsConfig, ScenarioConfig};
pub use flow::{
    encode_ack, encode_data, payload_for, DeliveryRecord, FlowCounters, FlowSet, FlowState, HEADER_LEN,
};
pub use metrics::{collect_metrics, ChannelSample, MetricsSeries, Phenomenology};
pub use run::{run_scenario, Artifacts, RunOptions, ScenarioError, ScenarioOutcome, SetupError, TracingNetSim, COLUMNS};

/// The bundled patrol scenario.
pub const PATROL_JSON: &str = include_str!("../../scenarios/patrol.json");
