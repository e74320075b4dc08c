//! Deterministic discrete-event engine, event log, scenario runner and
//! metrics.

pub mod config;
pub mod kernel;
pub mod log;
pub mod measure;
pub mod report;
pub mod runner;

pub use config::{ConfigError, Scenario};
pub use kernel::Kernel;
pub use log::{EventKind, EventLog, EventRecord, Fields};
pub use measure::{measure_instantiation, MeasureError};
pub use report::{export_report, sample_usage, ExportFormat, MetricsReport};
pub use runner::{run_scenario, RunError, RunOutcome, Submission, System};
