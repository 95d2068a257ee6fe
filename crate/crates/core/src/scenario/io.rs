//! Run log rows, summary file and CSV/TOML persistence.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::run::OcpRecord;
use crate::error::Result;

/// Column order of the run CSV.
pub const CSV_HEADER: &str = "t,x,y,psi,u,v,r,x_d,y_d,psi_d,e_x,e_y,e_psi,u1,u2,u3,u4,tau_x,tau_y,tau_n,\
p1,p2,p3,nis1,nis2,nis3,true_mode,locked_mode,alloc_mode,status,sqp_iterations,kkt_residual,lyapunov,\
descent_margin,jensen_margin,fallback";

/// One control period. Mode columns use 1..3 for I..III and 0 for none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub x_d: f64,
    pub y_d: f64,
    pub psi_d: f64,
    pub e_x: f64,
    pub e_y: f64,
    pub e_psi: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub tau_n: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub nis1: f64,
    pub nis2: f64,
    pub nis3: f64,
    pub true_mode: u8,
    pub locked_mode: u8,
    pub alloc_mode: u8,
    pub status: String,
    pub sqp_iterations: u32,
    pub kkt_residual: f64,
    pub lyapunov: f64,
    /// Worst `V(xi_1) - V(xi_0) + alpha |eta~_0|^2` over the horizon solves
    /// that did not fall back.
    pub descent_margin: Option<f64>,
    /// Same quantity for the fused command, when it is checked.
    pub jensen_margin: Option<f64>,
    pub fallback: u8,
}

impl LogRow {
    pub fn is_finite(&self) -> bool {
        [
            self.t, self.x, self.y, self.psi, self.u, self.v, self.r, self.x_d, self.y_d, self.psi_d, self.e_x, self.e_y,
            self.e_psi, self.u1, self.u2, self.u3, self.u4, self.tau_x, self.tau_y, self.tau_n, self.p1, self.p2,
            self.p3, self.nis1, self.nis2, self.nis3, self.kkt_residual, self.lyapunov,
        ]
        .iter()
        .chain(self.descent_margin.iter())
        .chain(self.jensen_margin.iter())
        .all(|v| v.is_finite())
    }

    pub fn command(&self) -> [f64; 4] {
        [self.u1, self.u2, self.u3, self.u4]
    }

    pub fn posterior(&self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }
}

/// Seconds, or a marker string when the quantity does not apply or was
/// never reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Timing {
    Seconds(f64),
    Marker(String),
}

impl Timing {
    pub fn not_applicable() -> Self {
        Timing::Marker("n/a".into())
    }

    pub fn not_reached() -> Self {
        Timing::Marker("not-reached".into())
    }

    pub fn from_option(v: Option<f64>) -> Self {
        v.map(Timing::Seconds).unwrap_or_else(Self::not_reached)
    }

    pub fn seconds(&self) -> Option<f64> {
        match self {
            Timing::Seconds(s) => Some(*s),
            Timing::Marker(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub t_fault: f64,
    pub from: String,
    pub to: String,
    pub t_det: Timing,
    pub t_det_confirmed: Timing,
    pub t_acc: Timing,
    pub t_acc_confirmed: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockEventRecord {
    pub t: f64,
    pub event: String,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: u8,
    pub controller: String,
    pub seed: u64,
    pub steps: usize,
    pub total_time: f64,
    pub horizon_solves: usize,
    pub optimal_solves: usize,
    pub fallback_steps: usize,
    pub fallback_fraction: f64,
    pub metrics: MetricsReport,
    pub transitions: Vec<TransitionSummary>,
    pub lock_events: Vec<LockEventRecord>,
}

impl std::fmt::Display for Timing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Timing::Seconds(v) => write!(f, "{v:.2} s"),
            Timing::Marker(m) => f.write_str(m),
        }
    }
}

pub fn write_rows<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, File::create(path)?)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn summary_to_toml(summary: &RunSummary) -> Result<String> {
    toml::to_string(summary).map_err(|e| crate::error::Error::InvalidConfig(format!("summary serialization: {e}")))
}

pub fn write_summary(summary: &RunSummary, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, summary_to_toml(summary)?)?;
    Ok(())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<RunSummary> {
    Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
}

/// Column order of the horizon-solve telemetry CSV.
pub const TELEMETRY_HEADER: &str = "step,t,mode,status,iterations,kkt_residual,cost,first_step_descent,descent_bound,\
contraction_enforced,u0_1,u0_2,u0_3,u0_4,xi0_1,xi0_2,xi0_3,xi0_4,xi0_5,xi0_6,xi0_7,xi0_8,xi0_9";

/// One line per horizon solve; enough to re-evaluate the first-step
/// contraction offline together with the run log references.
pub fn write_telemetry(records: &[OcpRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TELEMETRY_HEADER.split(','))?;
    for rec in records {
        let mut fields = vec![
            rec.step.to_string(),
            rec.t.to_string(),
            rec.mode.label().to_string(),
            rec.status.to_string(),
            rec.iterations.to_string(),
            rec.kkt_residual.to_string(),
            rec.cost.to_string(),
            rec.first_step_descent.to_string(),
            rec.descent_bound.to_string(),
            u8::from(rec.contraction_enforced).to_string(),
        ];
        fields.extend(rec.u0.iter().map(|v| v.to_string()));
        fields.extend(rec.xi0.to_vector().iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
