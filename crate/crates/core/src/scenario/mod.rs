//! Scenario definition, closed-loop execution, metrics and persistence.

pub mod config;
pub mod io;
pub mod metrics;
pub mod reference;
pub mod run;

pub use config::{inject_fault, ControllerKind, FaultEvent, FaultSchedule, FeedbackSource, ScenarioConfig};
pub use io::{
    read_log, read_summary, write_log, write_summary, write_telemetry, LogRow, RunSummary, Timing, CSV_HEADER,
    TELEMETRY_HEADER,
};
pub use metrics::{axis_metrics, metrics_from_errors, AxisMetrics, MetricsReport};
pub use reference::{reference, reference_horizon, reference_near, CaseId, HeadingUnwrap};
pub use run::{run, run_partial, BlendRecord, OcpRecord, RunLog};

/// Metrics of a finished log.
pub fn compute_metrics(rows: &[LogRow]) -> crate::Result<MetricsReport> {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let e: Vec<[f64; 3]> = rows.iter().map(|r| [r.e_x, r.e_y, r.e_psi]).collect();
    metrics_from_errors(&t, &e)
}
