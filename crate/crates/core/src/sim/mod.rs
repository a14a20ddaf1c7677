//! Simulation study: populations, covariate-availability scenarios, the
//! replication harness and its reports.

mod dgp;
mod harness;
mod report;
mod scenario;

pub use dgp::{g, generate_dgp, DgpKind, DgpSetting};
pub use harness::{
    population_r2_d, run_scenario, BalanceMetricKind, Design, EstimatorSpec, MetricRow, MetricsTable, SimulationConfig,
    ThresholdRule, RATIO_FLOOR,
};
pub use report::{emit_report, write_csv, Figure};
pub use scenario::ScenarioSpec;
