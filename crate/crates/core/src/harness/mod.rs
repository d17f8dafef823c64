//! Scenario configuration, execution and error metrics.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{EstimatorKind, FusionConfig, ScenarioConfig, SensorConfig, SwitchConfig};
pub use metrics::{
    compute_metrics, read_state_csv, write_state_csv, AxisStats, MetricsReport, StateRow,
};
pub use run::{run_scenario, write_outputs, EpochRecord, EstimatorRun, Scenario, ScenarioRun};
