//! Tracking metrics over a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisMetrics {
    pub rmse: f64,
    pub max_ae: f64,
    pub sse: f64,
    /// Trapezoidal integral of |e| over time.
    pub iae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub x: AxisMetrics,
    pub y: AxisMetrics,
    pub psi: AxisMetrics,
}

/// Metrics of one error signal sampled at times `t`.
pub fn axis_metrics(t: &[f64], e: &[f64]) -> Result<AxisMetrics> {
    if t.is_empty() || t.len() != e.len() {
        return Err(Error::InvalidConfig("metrics need matching, non-empty samples".into()));
    }
    let n = e.len() as f64;
    let sse: f64 = e.iter().map(|v| v * v).sum();
    let max_ae = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let iae = t
        .windows(2)
        .zip(e.windows(2))
        .map(|(tw, ew)| 0.5 * (tw[1] - tw[0]) * (ew[0].abs() + ew[1].abs()))
        .sum();
    Ok(AxisMetrics { rmse: (sse / n).sqrt(), max_ae, sse, iae })
}

/// Per-axis metrics from time stamps and `(e_x, e_y, e_psi)` samples; the
/// heading error is expected already wrapped.
pub fn metrics_from_errors(t: &[f64], errors: &[[f64; 3]]) -> Result<MetricsReport> {
    let axis = |k: usize| axis_metrics(t, &errors.iter().map(|e| e[k]).collect::<Vec<_>>());
    Ok(MetricsReport { x: axis(0)?, y: axis(1)?, psi: axis(2)? })
}
