//! Control fusion and mode supervision.
//!
//! Per-mode optimal forces are blended with the posterior weights, the blend
//! is allocated under the most probable mode and projected onto the input
//! limits. A hysteresis state machine decides when to lock onto a single mode
//! (only that mode's problem is then solved) and when to return to blending.
//! The supervisor also measures detection and accommodation times against the
//! scripted fault instants.

use nalgebra::Vector3;

use crate::allocation::{self, InputLimits, ThrustCommand, ThrusterLayout};
use crate::error::{Error, Result};
use crate::estimation::{map_index, ModeId, ModeLibrary};

/// Chi-square 99.9 % quantile with six degrees of freedom.
pub const CHI2_6_999: f64 = 22.458;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub p_on: f64,
    pub p_off: f64,
    pub n_on: u32,
    pub n_off: u32,
    pub blend_enabled: bool,
    /// Damping of the fusion allocation.
    pub epsilon: f64,
    /// NIS gate for the locked mode's filter.
    pub anomaly_gate: f64,
    /// Consecutive gate violations that force an unlock.
    pub anomaly_count: u32,
    /// Accommodation band on |e_x| and |e_y|, m.
    pub accommodation_band: f64,
    /// Time the error must stay in the band, s.
    pub accommodation_dwell: f64,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.p_off && self.p_off < self.p_on && self.p_on < 1.0) {
            return Err(Error::InvalidConfig("need 0 < p_off < p_on < 1".into()));
        }
        if self.n_on == 0 || self.n_off == 0 || self.anomaly_count == 0 {
            return Err(Error::InvalidConfig("dwell counts must be at least one".into()));
        }
        if !(self.epsilon >= 0.0) || !(self.anomaly_gate > 0.0) {
            return Err(Error::InvalidConfig("fusion damping and anomaly gate must be valid".into()));
        }
        if !(self.accommodation_band > 0.0) || !(self.accommodation_dwell > 0.0) {
            return Err(Error::InvalidConfig("accommodation band and dwell must be positive".into()));
        }
        Ok(())
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            p_on: 0.95,
            p_off: 0.80,
            n_on: 10,
            n_off: 5,
            blend_enabled: true,
            epsilon: 1e-12,
            anomaly_gate: CHI2_6_999,
            anomaly_count: 5,
            accommodation_band: 0.1,
            accommodation_dwell: 1.0,
        }
    }
}

/// Lock transition reported by [`hysteresis_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockEvent {
    Locked(ModeId),
    Unlocked(ModeId),
    AnomalyUnlocked(ModeId),
}

/// Timing of one scripted fault transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionTiming {
    pub t_fault: f64,
    pub from: Option<ModeId>,
    pub to: Option<ModeId>,
    /// Start of the first confirming window (`p_true >= p_on` for `n_on`
    /// consecutive samples), relative to the fault.
    pub t_det: Option<f64>,
    /// Sample that completes that window, relative to the fault.
    pub t_det_confirmed: Option<f64>,
    /// Start of the first in-band window lasting the dwell time.
    pub t_acc: Option<f64>,
    /// End of that window.
    pub t_acc_confirmed: Option<f64>,
    det_run: u32,
    det_start: Option<f64>,
    acc_start: Option<f64>,
}

impl TransitionTiming {
    pub fn new(t_fault: f64, from: Option<ModeId>, to: Option<ModeId>) -> Self {
        Self {
            t_fault,
            from,
            to,
            t_det: None,
            t_det_confirmed: None,
            t_acc: None,
            t_acc_confirmed: None,
            det_run: 0,
            det_start: None,
            acc_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupervisorState {
    pub locked_mode: Option<ModeId>,
    /// Mode whose confirmation run `on_counter` counts.
    pub candidate: Option<ModeId>,
    pub on_counter: u32,
    pub off_counter: u32,
    pub anomaly_counter: u32,
    /// Last mode that reached the lock rule; the lagging adapted model.
    pub confirmed_mode: Option<ModeId>,
    pub transitions: Vec<TransitionTiming>,
}

impl SupervisorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a scripted fault (ground truth, for timing only).
    pub fn record_fault(&mut self, t: f64, from: Option<ModeId>, to: Option<ModeId>) {
        self.transitions.push(TransitionTiming::new(t, from, to));
    }

    /// Mode used for allocation: the locked mode, else the MAP mode.
    pub fn allocation_mode(&self, p: &Vector3<f64>) -> ModeId {
        match self.locked_mode {
            Some(m) => m,
            None => ModeId::from_index(map_index(p, None)).unwrap_or(ModeId::I),
        }
    }
}

/// `sum_i p_i tau_i`.
pub fn blend_force(candidates: &[Vector3<f64>; 3], p: &Vector3<f64>) -> Vector3<f64> {
    candidates.iter().zip(p.iter()).map(|(t, w)| t * *w).sum()
}

/// Unprojected and projected command for a blended force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedCommand {
    pub mode: ModeId,
    pub raw: ThrustCommand,
    pub applied: ThrustCommand,
}

/// Allocate `tau_blend` under the MAP mode (ties toward the locked mode,
/// else the lowest index) and project onto the limits.
#[allow(clippy::too_many_arguments)]
pub fn fuse_command(
    tau_blend: &Vector3<f64>,
    p: &Vector3<f64>,
    locked: Option<ModeId>,
    library: &ModeLibrary,
    layout: &ThrusterLayout,
    limits: &InputLimits,
    u_prev: &ThrustCommand,
    dt: f64,
    epsilon: f64,
) -> Result<FusedCommand> {
    let idx = map_index(p, locked.map(ModeId::index));
    let mode = ModeId::from_index(idx).unwrap_or(ModeId::I);
    let raw = allocation::allocate_damped(tau_blend, library.parameters(mode), layout, epsilon)?;
    let applied = allocation::project_input(&raw, u_prev, limits, dt);
    Ok(FusedCommand { mode, raw, applied })
}

/// Advance the lock state machine by one posterior sample.
pub fn hysteresis_step(sup: &mut SupervisorState, p: &Vector3<f64>, cfg: &FusionConfig) -> Option<LockEvent> {
    let lead = ModeId::from_index(map_index(p, sup.locked_mode.map(ModeId::index))).unwrap_or(ModeId::I);
    if p[lead.index()] >= cfg.p_on {
        if sup.candidate == Some(lead) {
            sup.on_counter += 1;
        } else {
            sup.candidate = Some(lead);
            sup.on_counter = 1;
        }
    } else {
        sup.candidate = None;
        sup.on_counter = 0;
    }

    let mut event = None;
    if let Some(locked) = sup.locked_mode {
        if p[locked.index()] <= cfg.p_off {
            sup.off_counter += 1;
        } else {
            sup.off_counter = 0;
        }
        if sup.off_counter >= cfg.n_off {
            sup.locked_mode = None;
            sup.off_counter = 0;
            sup.anomaly_counter = 0;
            event = Some(LockEvent::Unlocked(locked));
        }
    }
    if sup.locked_mode.is_none() && sup.on_counter >= cfg.n_on {
        if let Some(c) = sup.candidate {
            sup.locked_mode = Some(c);
            sup.confirmed_mode = Some(c);
            sup.off_counter = 0;
            sup.anomaly_counter = 0;
            event = Some(LockEvent::Locked(c));
        }
    }
    event
}

/// Force an unlock when the locked mode's filter keeps failing its
/// innovation gate. The confirmation run restarts from zero.
pub fn anomaly_check(sup: &mut SupervisorState, nis: &Vector3<f64>, cfg: &FusionConfig) -> Option<LockEvent> {
    let locked = sup.locked_mode?;
    if nis[locked.index()] > cfg.anomaly_gate {
        sup.anomaly_counter += 1;
    } else {
        sup.anomaly_counter = 0;
    }
    if sup.anomaly_counter >= cfg.anomaly_count {
        sup.locked_mode = None;
        sup.anomaly_counter = 0;
        sup.off_counter = 0;
        sup.on_counter = 0;
        sup.candidate = None;
        return Some(LockEvent::AnomalyUnlocked(locked));
    }
    None
}

/// Update detection and accommodation timers at sample time `t`.
///
/// Detection needs the true mode's posterior at or above `p_on` for `n_on`
/// consecutive samples; accommodation needs `|e_x|, |e_y|` below the band for
/// the dwell time. Both report the start of the qualifying window and the
/// instant it completes, relative to the fault. A later fault closes the
/// timers of earlier ones.
pub fn update_timers(sup: &mut SupervisorState, t: f64, p: Option<&Vector3<f64>>, error_xy: (f64, f64), cfg: &FusionConfig) {
    let ends: Vec<f64> = sup.transitions.iter().skip(1).map(|tr| tr.t_fault).chain([f64::INFINITY]).collect();
    for (tr, end) in sup.transitions.iter_mut().zip(ends) {
        if t < tr.t_fault - 1e-9 || t >= end - 1e-9 {
            continue;
        }
        let rel = |time: f64| time - tr.t_fault;
        if tr.t_det_confirmed.is_none() {
            if let (Some(p), Some(to)) = (p, tr.to) {
                if p[to.index()] >= cfg.p_on {
                    if tr.det_run == 0 {
                        tr.det_start = Some(t);
                    }
                    tr.det_run += 1;
                    if tr.det_run >= cfg.n_on {
                        tr.t_det = tr.det_start.map(rel);
                        tr.t_det_confirmed = Some(rel(t));
                    }
                } else {
                    tr.det_run = 0;
                    tr.det_start = None;
                }
            }
        }
        if tr.t_acc_confirmed.is_none() {
            let inside = error_xy.0.abs() < cfg.accommodation_band && error_xy.1.abs() < cfg.accommodation_band;
            if inside {
                let start = *tr.acc_start.get_or_insert(t);
                if t - start >= cfg.accommodation_dwell - 1e-9 {
                    tr.t_acc = Some(rel(start));
                    tr.t_acc_confirmed = Some(rel(t));
                }
            } else {
                tr.acc_start = None;
            }
        }
    }
}
