//! Scenario configuration, the event loop that runs a scenario in
//! simulation or emulation, and the reports it produces.

pub mod config;
pub mod dispatch;
pub mod experiments;
pub mod metrics;
pub mod pool;
pub mod report;
pub mod runner;

pub use config::{ConfigError, Mode, ScenarioConfig};
pub use dispatch::{ideal_makespan, Dispatcher};
pub use metrics::{aggregate_throughput, efficiency, per_node_throughput, stage_breakdown, RunReport};
pub use report::{emit_csv, emit_summary, recompute, Metrics};
pub use runner::{emulate_scenario, run_scenario, run_with, RunError, RunSettings};
