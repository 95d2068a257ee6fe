//! Backstepping error variables, the auxiliary force law and the composite
//! Lyapunov function shared by every mode-conditioned controller.
//!
//! With `eta~ = eta - eta_d`, `eta_r' = eta_d' - eta~` and
//! `s = eta' - eta_r'`, the law
//!
//! ```text
//! tau_b = M v_r' + C(nu) v_r + D(nu) v_r - J^T(psi) (Kp eta~ + Kd s)
//! ```
//!
//! gives `V2' = -s^T (D* + Kd) s - eta~^T Kp eta~` for
//! `V2 = 1/2 eta~^T Kp eta~ + 1/2 s^T M*(psi) s`, `M* = J M J^T`.

use nalgebra::{Matrix3, SVector, Vector3};

use crate::allocation::{self, FaultParameters, InputLimits, ThrustCommand, ThrusterLayout};
use crate::dynamics::{coriolis, damping, rotation, HydroModel, VehicleState};
use crate::error::{Error, Result};
use crate::math::{self, wrap_angle, yaw_skew};

pub type XiVector = SVector<f64, 9>;

/// Desired pose with its first and second time derivatives (Earth frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSignal {
    pub eta_d: Vector3<f64>,
    pub eta_d_dot: Vector3<f64>,
    pub eta_d_ddot: Vector3<f64>,
}

impl ReferenceSignal {
    /// Constant pose, zero derivatives.
    pub fn hold(eta_d: Vector3<f64>) -> Self {
        Self { eta_d, eta_d_dot: Vector3::zeros(), eta_d_ddot: Vector3::zeros() }
    }

    /// Compatible body-frame velocity `nu_d = J^-1(psi_d) eta_d'`.
    pub fn nu_d(&self) -> Vector3<f64> {
        rotation(self.eta_d[2]).transpose() * self.eta_d_dot
    }

    /// Body-frame acceleration `nu_d'` matching `eta_d''`.
    pub fn nu_d_dot(&self) -> Vector3<f64> {
        let jt = rotation(self.eta_d[2]).transpose();
        let r_d = self.eta_d_dot[2];
        -yaw_skew(r_d) * jt * self.eta_d_dot + jt * self.eta_d_ddot
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackstepGains {
    pub kp: Matrix3<f64>,
    pub kd: Matrix3<f64>,
    /// Bias weight in the composite Lyapunov function.
    pub pd: Matrix3<f64>,
    /// Bias leakage rates, `d' = -diag(lambda) d`.
    pub lambda: Vector3<f64>,
}

impl BackstepGains {
    pub fn new(kp: Matrix3<f64>, kd: Matrix3<f64>, pd: Matrix3<f64>, lambda: Vector3<f64>) -> Result<Self> {
        for (name, m) in [("Kp", &kp), ("Kd", &kd), ("Pd", &pd)] {
            if !math::is_spd(m, 1e-12) {
                return Err(Error::NotPositiveDefinite(format!("gain {name}")));
            }
        }
        if lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidConfig("bias leakage rates must be non-negative".into()));
        }
        Ok(Self { kp, kd, pd, lambda })
    }
}

impl Default for BackstepGains {
    fn default() -> Self {
        Self {
            kp: Matrix3::identity(),
            kd: Matrix3::identity(),
            pd: Matrix3::identity() * 1e-3,
            lambda: Vector3::zeros(),
        }
    }
}

/// `xi = [eta~; s; d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedError {
    pub eta_tilde: Vector3<f64>,
    pub s: Vector3<f64>,
    pub d: Vector3<f64>,
}

impl AugmentedError {
    pub fn zero() -> Self {
        Self { eta_tilde: Vector3::zeros(), s: Vector3::zeros(), d: Vector3::zeros() }
    }

    pub fn to_vector(&self) -> XiVector {
        let mut v = XiVector::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.eta_tilde);
        v.fixed_rows_mut::<3>(3).copy_from(&self.s);
        v.fixed_rows_mut::<3>(6).copy_from(&self.d);
        v
    }

    pub fn from_vector(v: &XiVector) -> Self {
        Self {
            eta_tilde: v.fixed_rows::<3>(0).into_owned(),
            s: v.fixed_rows::<3>(3).into_owned(),
            d: v.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Neg for AugmentedError {
    type Output = Self;
    fn neg(self) -> Self {
        Self { eta_tilde: -self.eta_tilde, s: -self.s, d: -self.d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorVariables {
    pub eta_tilde: Vector3<f64>,
    pub s: Vector3<f64>,
    pub eta_r_dot: Vector3<f64>,
    pub v_r: Vector3<f64>,
    pub v_r_dot: Vector3<f64>,
}

impl ErrorVariables {
    pub fn augmented(&self, d: Vector3<f64>) -> AugmentedError {
        AugmentedError { eta_tilde: self.eta_tilde, s: self.s, d }
    }
}

/// Pose error with the heading component wrapped to `(-pi, pi]`.
pub fn pose_error(eta: &Vector3<f64>, eta_d: &Vector3<f64>) -> Vector3<f64> {
    let mut e = eta - eta_d;
    e[2] = wrap_angle(e[2]);
    e
}

pub fn error_variables(state: &VehicleState, reference: &ReferenceSignal) -> ErrorVariables {
    let psi = state.eta[2];
    let j = rotation(psi);
    let eta_tilde = pose_error(&state.eta, &reference.eta_d);
    let eta_dot = j * state.nu;
    let eta_r_dot = reference.eta_d_dot - eta_tilde;
    let s = eta_dot - eta_r_dot;
    let eta_tilde_dot = eta_dot - reference.eta_d_dot;
    let eta_r_ddot = reference.eta_d_ddot - eta_tilde_dot;
    let jt = j.transpose();
    let v_r = jt * eta_r_dot;
    // d/dt J^T = -S(r) J^T
    let v_r_dot = -yaw_skew(state.nu[2]) * jt * eta_r_dot + jt * eta_r_ddot;
    ErrorVariables { eta_tilde, s, eta_r_dot, v_r, v_r_dot }
}

pub fn auxiliary_law(
    state: &VehicleState,
    reference: &ReferenceSignal,
    gains: &BackstepGains,
    hydro: &HydroModel,
) -> Vector3<f64> {
    let ev = error_variables(state, reference);
    let nu = &state.nu;
    hydro.inertia() * ev.v_r_dot + coriolis(hydro, nu) * ev.v_r + damping(hydro, nu) * ev.v_r
        - rotation(state.eta[2]).transpose() * (gains.kp * ev.eta_tilde + gains.kd * ev.s)
}

/// `M*(psi) = J(psi) M J^T(psi)`.
pub fn inertia_star(hydro: &HydroModel, psi: f64) -> Matrix3<f64> {
    let j = rotation(psi);
    j * hydro.inertia() * j.transpose()
}

/// Analytic `d/dt M*` with `dJ/dt = J S(r)`.
pub fn inertia_star_dot(hydro: &HydroModel, psi: f64, r: f64) -> Matrix3<f64> {
    let j = rotation(psi);
    let j_dot = j * yaw_skew(r);
    j_dot * hydro.inertia() * j.transpose() + j * hydro.inertia() * j_dot.transpose()
}

/// `C*(nu, psi) = J [C(nu) - M J^T J'] J^T`.
pub fn coriolis_star(hydro: &HydroModel, nu: &Vector3<f64>, psi: f64) -> Matrix3<f64> {
    let j = rotation(psi);
    let jt_jdot = yaw_skew(nu[2]);
    j * (coriolis(hydro, nu) - hydro.inertia() * jt_jdot) * j.transpose()
}

/// `V2 = 1/2 eta~^T Kp eta~ + 1/2 s^T M*(psi) s`.
pub fn lyapunov_v2(eta_tilde: &Vector3<f64>, s: &Vector3<f64>, gains: &BackstepGains, hydro: &HydroModel, psi: f64) -> f64 {
    0.5 * eta_tilde.dot(&(gains.kp * eta_tilde)) + 0.5 * s.dot(&(inertia_star(hydro, psi) * s))
}

/// Composite function `V = V2 + 1/2 d^T Pd d`.
pub fn lyapunov_value(xi: &AugmentedError, gains: &BackstepGains, hydro: &HydroModel, psi: f64) -> f64 {
    lyapunov_v2(&xi.eta_tilde, &xi.s, gains, hydro, psi) + 0.5 * xi.d.dot(&(gains.pd * xi.d))
}

/// Gradient of `V` with respect to `xi`, including the heading dependence of
/// `M*` through the heading-error component.
pub fn lyapunov_gradient(xi: &AugmentedError, gains: &BackstepGains, hydro: &HydroModel, psi: f64) -> XiVector {
    let m_star = inertia_star(hydro, psi);
    let dm_dpsi = inertia_star_dot(hydro, psi, 1.0);
    let mut g = XiVector::zeros();
    let mut ge = gains.kp * xi.eta_tilde;
    ge[2] += 0.5 * xi.s.dot(&(dm_dpsi * xi.s));
    g.fixed_rows_mut::<3>(0).copy_from(&ge);
    g.fixed_rows_mut::<3>(3).copy_from(&(m_star * xi.s));
    g.fixed_rows_mut::<3>(6).copy_from(&(gains.pd * xi.d));
    g
}

/// Quadratic-form matrix of `V` at a fixed heading: `V = 1/2 xi^T P xi`.
pub fn lyapunov_matrix(gains: &BackstepGains, hydro: &HydroModel, psi: f64) -> nalgebra::SMatrix<f64, 9, 9> {
    let mut p = nalgebra::SMatrix::<f64, 9, 9>::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&gains.kp);
    p.fixed_view_mut::<3, 3>(3, 3).copy_from(&inertia_star(hydro, psi));
    p.fixed_view_mut::<3, 3>(6, 6).copy_from(&gains.pd);
    p
}

/// Fault-unaware backstepping baseline: the auxiliary law allocated with the
/// assumed (normally nominal) thruster parameters, then projected.
#[allow(clippy::too_many_arguments)]
pub fn bsc_controller(
    state: &VehicleState,
    reference: &ReferenceSignal,
    gains: &BackstepGains,
    hydro: &HydroModel,
    fault_assumed: &FaultParameters,
    layout: &ThrusterLayout,
    limits: &InputLimits,
    u_prev: &ThrustCommand,
    dt: f64,
    epsilon: f64,
) -> Result<ThrustCommand> {
    let tau_b = auxiliary_law(state, reference, gains, hydro);
    let u = allocation::allocate_damped(&tau_b, fault_assumed, layout, epsilon)?;
    Ok(allocation::project_input(&u, u_prev, limits, dt))
}
