//! Scenario configuration, experiment execution, metrics and file output.

pub mod config;
pub mod metrics;
pub mod output;
pub mod plot;
pub mod run;
pub mod scenarios;

pub use config::{AssocMode, ClutterSpec, Detection, Oracle, ScenarioConfig, ScenarioKind};
pub use metrics::{coalescence_metric, compute_rmse, Coalescence};
pub use output::{emit_outputs, run_csv};
pub use run::{run_batch, run_scenario, run_scenario_observed, RunRecord, StepRecord, StepView};
