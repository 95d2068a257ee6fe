//! Fault-tolerant trajectory tracking for a planar four-thruster AUV.
//!
//! A bank of unscented Kalman filters, one per actuator-fault hypothesis,
//! feeds a recursive Bayesian mode posterior. A supervisor locks onto a mode
//! with hysteresis, or blends per-mode forces by posterior weight while the
//! evidence is ambiguous. Each mode runs a Lyapunov-constrained MPC whose first
//! move must strictly decrease a backstepping Lyapunov function, which keeps
//! the closed loop stable regardless of the optimizer's tuning.
//!
//! Modules, bottom up:
//!
//! * [`dynamics`]: 3-DOF vehicle model and RK4 integration.
//! * [`allocation`]: thruster geometry, fault parameters, saturation.
//! * [`backstepping`]: error variables, Lyapunov functions, auxiliary law.
//! * [`lmpc`]: the constrained optimal control problem and its SQP solver.
//! * [`estimation`]: UKF bank and mode posterior.
//! * [`supervisor`]: lock/unlock hysteresis and force blending.
//! * [`scenario`]: reference trajectories, fault schedules, closed-loop runs, CSV output.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod backstepping;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod lmpc;
pub mod math;
pub mod scenario;
pub mod supervisor;

pub use error::{Error, Result};
