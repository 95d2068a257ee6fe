//! Mode-conditioned Lyapunov-constrained MPC.
//!
//! The horizon problem is posed in the augmented error coordinates
//! `xi = [eta~; s; d]` and predicted with explicit Euler steps. Decision
//! variables are the `N` thrust vectors; the predictor is eliminated by single
//! shooting. Inequalities are the amplitude box, the per-step rate box, the
//! first-step contraction `V(xi_1) - V(xi_0) <= -alpha |eta~_0|^2` (hard) and
//! the terminal level `V(xi_N) <= c` (elastic, see [`OcpConfig::terminal_weight`]).

pub mod qp;
mod sqp;

use nalgebra::{Cholesky, DVector, Matrix3, Matrix4, SMatrix, Vector3};

use crate::allocation::{self, FaultParameters, InputLimits, ThrustCommand, ThrusterLayout};
use crate::backstepping::{self, AugmentedError, BackstepGains, ReferenceSignal, XiVector};
use crate::dynamics::{coriolis, damping, rotation, HydroModel, VehicleState};
use crate::error::{Error, Result};
use crate::math::{self, yaw_skew};

pub use sqp::solve_ocp;

/// Horizon length, weights, contraction parameters and solver limits.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q_eta: Matrix3<f64>,
    pub q_s: Matrix3<f64>,
    pub q_d: Matrix3<f64>,
    pub r_du: Matrix4<f64>,
    pub alpha: f64,
    /// Terminal level `c` of the set `{V <= c}`.
    pub terminal_level: f64,
    /// Penalty per unit of terminal-level violation (exact l1 penalty).
    pub terminal_weight: f64,
    /// Off for the plain adaptive MPC baseline.
    pub enforce_descent: bool,
    pub enforce_terminal: bool,
    /// Internal safety margin subtracted from the contraction bound.
    pub descent_tightening: f64,
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    /// Damping of the allocation used by the fallback move.
    pub allocation_epsilon: f64,
}

impl OcpConfig {
    /// Configuration with the default weights, `alpha = 0.05` and the terminal
    /// level evaluated on the 0.05 error ball for the given model and gains.
    pub fn for_model(hydro: &HydroModel, gains: &BackstepGains) -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            q_eta: Matrix3::from_diagonal(&Vector3::new(1e5, 1e5, 1e3)),
            q_s: Matrix3::from_diagonal(&Vector3::new(1e2, 1e2, 1e2)),
            q_d: Matrix3::identity(),
            r_du: Matrix4::identity() * 1e-4,
            alpha: 0.05,
            terminal_level: terminal_level_on_ball(hydro, gains, 0.05),
            terminal_weight: 1e3,
            enforce_descent: true,
            enforce_terminal: true,
            descent_tightening: 1e-9,
            max_iterations: 30,
            kkt_tolerance: 1e-6,
            allocation_epsilon: 1e-12,
        }
    }

    /// Same problem without contraction and terminal constraints.
    pub fn unconstrained_variant(&self) -> Self {
        Self { enforce_descent: false, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least one step".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("controller period must be positive".into()));
        }
        if !(self.alpha > 0.0) || !(self.terminal_level > 0.0) {
            return Err(Error::InvalidConfig("alpha and terminal level must be positive".into()));
        }
        if !(self.terminal_weight > 0.0) || !(self.descent_tightening >= 0.0) {
            return Err(Error::InvalidConfig("terminal weight must be positive, tightening non-negative".into()));
        }
        if self.max_iterations == 0 || !(self.kkt_tolerance > 0.0) || !(self.allocation_epsilon >= 0.0) {
            return Err(Error::InvalidConfig("solver limits must be positive".into()));
        }
        for (name, ok) in [
            ("Q_eta", math::is_spd(&self.q_eta, 1e-12)),
            ("Q_s", math::is_spd(&self.q_s, 1e-12)),
            ("Q_d", math::is_spd(&self.q_d, 1e-12)),
            ("R", math::is_spd(&self.r_du, 1e-12)),
        ] {
            if !ok {
                return Err(Error::NotPositiveDefinite(format!("weight {name}")));
            }
        }
        Ok(())
    }
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self::for_model(&HydroModel::default(), &BackstepGains::default())
    }
}

/// `V` at `eta~ = s = radius * 1`, `d = 0`, heading zero.
pub fn terminal_level_on_ball(hydro: &HydroModel, gains: &BackstepGains, radius: f64) -> f64 {
    let xi = AugmentedError { eta_tilde: Vector3::repeat(radius), s: Vector3::repeat(radius), d: Vector3::zeros() };
    backstepping::lyapunov_value(&xi, gains, hydro, 0.0)
}

/// Vehicle model used inside the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionModel {
    pub hydro: HydroModel,
    pub layout: ThrusterLayout,
    pub gains: BackstepGains,
}

impl PredictionModel {
    pub fn new(hydro: HydroModel, layout: ThrusterLayout, gains: BackstepGains) -> Self {
        Self { hydro, layout, gains }
    }
}

impl Default for PredictionModel {
    fn default() -> Self {
        Self::new(HydroModel::default(), ThrusterLayout::default(), BackstepGains::default())
    }
}

/// Heading and body velocity implied by an error state and its reference.
pub fn reconstruct_state(xi: &AugmentedError, reference: &ReferenceSignal) -> VehicleState {
    let eta = reference.eta_d + xi.eta_tilde;
    let eta_dot = xi.s + reference.eta_d_dot - xi.eta_tilde;
    VehicleState::new(eta, rotation(eta[2]).transpose() * eta_dot)
}

/// Continuous error dynamics `xi' = f(xi, tau)` for a given generalized force.
pub fn error_dynamics(
    xi: &AugmentedError,
    tau: &Vector3<f64>,
    reference: &ReferenceSignal,
    model: &PredictionModel,
) -> AugmentedError {
    let state = reconstruct_state(xi, reference);
    let nu = state.nu;
    let j = rotation(state.eta[2]);
    let hydro = &model.hydro;
    let nu_dot = hydro.inertia_inv() * (tau + xi.d - coriolis(hydro, &nu) * nu - damping(hydro, &nu) * nu);
    let eta_ddot = j * yaw_skew(nu[2]) * nu + j * nu_dot;
    AugmentedError {
        eta_tilde: xi.s - xi.eta_tilde,
        s: eta_ddot - reference.eta_d_ddot + xi.s - xi.eta_tilde,
        d: -xi.d.component_mul(&model.gains.lambda),
    }
}

/// One explicit Euler step driven directly by a generalized force.
pub fn predict_step_force(
    xi: &AugmentedError,
    tau: &Vector3<f64>,
    reference: &ReferenceSignal,
    model: &PredictionModel,
    dt: f64,
) -> AugmentedError {
    let f = error_dynamics(xi, tau, reference, model);
    AugmentedError::from_vector(&(xi.to_vector() + dt * f.to_vector()))
}

/// One explicit Euler step with `tau = T(theta) Gamma u` for the given mode.
pub fn predict_step(
    xi: &AugmentedError,
    u: &ThrustCommand,
    mode: &FaultParameters,
    reference: &ReferenceSignal,
    model: &PredictionModel,
    dt: f64,
) -> AugmentedError {
    let tau = allocation::generalized_force(u, mode, &model.layout);
    predict_step_force(xi, &tau, reference, model, dt)
}

/// `V(xi)` with the heading taken from the reference plus the heading error.
pub fn lyapunov_at(xi: &AugmentedError, reference: &ReferenceSignal, model: &PredictionModel) -> f64 {
    backstepping::lyapunov_value(xi, &model.gains, &model.hydro, reference.eta_d[2] + xi.eta_tilde[2])
}

/// `V(xi_1) - V(xi_0)` for one predicted step and the required bound
/// `-alpha |eta~_0|^2`.
pub fn contraction_check(
    xi0: &AugmentedError,
    xi1: &AugmentedError,
    ref0: &ReferenceSignal,
    ref1: &ReferenceSignal,
    model: &PredictionModel,
    alpha: f64,
) -> (f64, f64) {
    let dv = lyapunov_at(xi1, ref1, model) - lyapunov_at(xi0, ref0, model);
    (dv, -alpha * xi0.eta_tilde.norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleFallback,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::InfeasibleFallback => "infeasible-fallback",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub u_sequence: Vec<ThrustCommand>,
    pub xi_sequence: Vec<AugmentedError>,
    /// Achieved `V(xi_1) - V(xi_0)` on the predictor.
    pub first_step_descent: f64,
    /// Required bound `-alpha |eta~_0|^2`.
    pub descent_bound: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub cost: f64,
}

impl OcpSolution {
    /// `first_step_descent - descent_bound`; non-positive when contracting.
    pub fn descent_margin(&self) -> f64 {
        self.first_step_descent - self.descent_bound
    }
}

/// Sizes of the assembled problem before the dynamics are eliminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpCounts {
    pub decision: usize,
    pub equality: usize,
    pub box_bounds: usize,
    pub rate_bounds: usize,
    pub descent: usize,
    pub terminal: usize,
}

/// One horizon problem, ready for [`solve_ocp`].
#[derive(Debug, Clone)]
pub struct Ocp {
    pub xi0: AugmentedError,
    /// References at steps `0..=N`.
    pub references: Vec<ReferenceSignal>,
    pub mode: FaultParameters,
    pub u_prev: ThrustCommand,
    pub limits: InputLimits,
    pub config: OcpConfig,
    pub model: PredictionModel,
    /// Fixed values of blocked-thruster commands, per step.
    pinned: Vec<ThrustCommand>,
    /// `(step, thruster)` of each free variable, step-major.
    free: Vec<(usize, usize)>,
    column: Vec<[Option<usize>; 4]>,
    q_stage_sqrt: SMatrix<f64, 9, 9>,
    r_sqrt: Matrix4<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn build_ocp(
    xi0: AugmentedError,
    references: Vec<ReferenceSignal>,
    mode: FaultParameters,
    u_prev: ThrustCommand,
    limits: InputLimits,
    config: OcpConfig,
    model: PredictionModel,
) -> Result<Ocp> {
    config.validate()?;
    let n = config.horizon;
    if references.len() != n + 1 {
        return Err(Error::InvalidConfig(format!("need {} horizon references, got {}", n + 1, references.len())));
    }
    let step = limits.rate_max * config.dt;
    let mut pinned = vec![ThrustCommand::zeros(); n];
    let mut free = Vec::new();
    let mut column = vec![[None; 4]; n];
    let (lo0, hi0) = limits.step_bounds(&u_prev, config.dt);
    for j in 0..4 {
        if mode.is_blocked(j) {
            // ramp to zero as fast as the rate limit allows
            let mut v = u_prev[j].clamp(limits.u_min[j], limits.u_max[j]);
            for (k, p) in pinned.iter_mut().enumerate() {
                v -= v.clamp(-step, step);
                if k == 0 {
                    v = v.clamp(lo0[j], hi0[j]);
                }
                p[j] = v;
            }
        }
    }
    for (k, col) in column.iter_mut().enumerate() {
        for (j, slot) in col.iter_mut().enumerate() {
            if !mode.is_blocked(j) {
                *slot = Some(free.len());
                free.push((k, j));
            }
        }
    }
    let mut q = SMatrix::<f64, 9, 9>::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&config.q_eta);
    q.fixed_view_mut::<3, 3>(3, 3).copy_from(&config.q_s);
    q.fixed_view_mut::<3, 3>(6, 6).copy_from(&config.q_d);
    let q_stage_sqrt = Cholesky::new(q).ok_or_else(|| Error::NotPositiveDefinite("stage weight".into()))?.l();
    let r_sqrt = Cholesky::new(config.r_du).ok_or_else(|| Error::NotPositiveDefinite("input weight".into()))?.l();
    Ok(Ocp {
        xi0,
        references,
        mode,
        u_prev,
        limits,
        config,
        model,
        pinned,
        free,
        column,
        q_stage_sqrt,
        r_sqrt,
    })
}

impl Ocp {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn counts(&self) -> OcpCounts {
        let n = self.horizon();
        OcpCounts {
            decision: 4 * n,
            equality: 9 * n,
            box_bounds: 8 * n,
            rate_bounds: 8 * n,
            descent: usize::from(self.config.enforce_descent),
            terminal: usize::from(self.config.enforce_terminal),
        }
    }

    pub fn free_variables(&self) -> usize {
        self.free.len()
    }

    /// Rate-limited ramp applied to blocked thrusters.
    pub fn pinned_inputs(&self) -> &[ThrustCommand] {
        &self.pinned
    }

    pub(crate) fn column(&self, k: usize, j: usize) -> Option<usize> {
        self.column[k][j]
    }

    pub(crate) fn free_index(&self, c: usize) -> (usize, usize) {
        self.free[c]
    }

    pub(crate) fn to_free(&self, seq: &[ThrustCommand]) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&(k, j)| seq[k][j]))
    }

    pub(crate) fn to_sequence(&self, z: &DVector<f64>) -> Vec<ThrustCommand> {
        let mut seq = self.pinned.clone();
        for (c, &(k, j)) in self.free.iter().enumerate() {
            seq[k][j] = z[c];
        }
        seq
    }

    /// Clamp a sequence into the box and rate limits step by step, starting
    /// from the previously applied command.
    pub fn project_sequence(&self, seq: &[ThrustCommand]) -> Vec<ThrustCommand> {
        let mut prev = self.u_prev;
        let mut out = Vec::with_capacity(seq.len());
        for (k, u) in seq.iter().enumerate() {
            let mut v = allocation::project_input(u, &prev, &self.limits, self.config.dt);
            for j in 0..4 {
                if self.mode.is_blocked(j) {
                    v[j] = self.pinned[k][j];
                }
            }
            out.push(v);
            prev = v;
        }
        out
    }

    pub fn rollout(&self, seq: &[ThrustCommand]) -> Vec<AugmentedError> {
        let mut xs = Vec::with_capacity(seq.len() + 1);
        let mut xi = self.xi0;
        xs.push(xi);
        for (k, u) in seq.iter().enumerate() {
            xi = predict_step(&xi, u, &self.mode, &self.references[k], &self.model, self.config.dt);
            xs.push(xi);
        }
        xs
    }

    pub fn stage_cost(&self, xi: &AugmentedError) -> f64 {
        xi.eta_tilde.dot(&(self.config.q_eta * xi.eta_tilde))
            + xi.s.dot(&(self.config.q_s * xi.s))
            + xi.d.dot(&(self.config.q_d * xi.d))
    }

    /// Smooth objective: stage costs on `xi_0..xi_{N-1}`, input increments
    /// and terminal `V(xi_N)`.
    pub fn cost(&self, seq: &[ThrustCommand]) -> f64 {
        let xs = self.rollout(seq);
        self.cost_of(seq, &xs)
    }

    pub(crate) fn cost_of(&self, seq: &[ThrustCommand], xs: &[AugmentedError]) -> f64 {
        let n = self.horizon();
        let mut c = 0.0;
        let mut prev = self.u_prev;
        for k in 0..n {
            c += self.stage_cost(&xs[k]);
            let du = seq[k] - prev;
            c += du.dot(&(self.config.r_du * du));
            prev = seq[k];
        }
        c + lyapunov_at(&xs[n], &self.references[n], &self.model)
    }

    pub fn terminal_value(&self, xs: &[AugmentedError]) -> f64 {
        let n = self.horizon();
        lyapunov_at(&xs[n], &self.references[n], &self.model)
    }

    /// Required first-step bound `-alpha |eta~_0|^2`.
    pub fn descent_bound(&self) -> f64 {
        -self.config.alpha * self.xi0.eta_tilde.norm_squared()
    }

    pub fn v0(&self) -> f64 {
        lyapunov_at(&self.xi0, &self.references[0], &self.model)
    }

    /// Contraction residual `V(xi_1) - V(xi_0) + alpha |eta~_0|^2`.
    pub fn descent_residual(&self, u0: &ThrustCommand) -> f64 {
        let xi1 = predict_step(&self.xi0, u0, &self.mode, &self.references[0], &self.model, self.config.dt);
        lyapunov_at(&xi1, &self.references[1], &self.model) - self.v0() - self.descent_bound()
    }

    /// `d xi_{k+1} / d u_k` (9x4).
    pub(crate) fn input_jacobian(&self, xi: &AugmentedError, k: usize) -> SMatrix<f64, 9, 4> {
        let state = reconstruct_state(xi, &self.references[k]);
        let g = rotation(state.eta[2]) * self.model.hydro.inertia_inv() * self.mode.effective_matrix(&self.model.layout);
        let mut b = SMatrix::<f64, 9, 4>::zeros();
        b.fixed_view_mut::<3, 4>(3, 0).copy_from(&(g * self.config.dt));
        b
    }

    /// `d xi_{k+1} / d xi_k` by central differences.
    pub(crate) fn state_jacobian(&self, xi: &AugmentedError, u: &ThrustCommand, k: usize) -> SMatrix<f64, 9, 9> {
        let x0 = xi.to_vector();
        let tau = allocation::generalized_force(u, &self.mode, &self.model.layout);
        let mut a = SMatrix::<f64, 9, 9>::zeros();
        for i in 0..9 {
            let h = 1e-6 * x0[i].abs().max(1.0);
            let mut xp = x0;
            let mut xm = x0;
            xp[i] += h;
            xm[i] -= h;
            let fp = predict_step_force(&AugmentedError::from_vector(&xp), &tau, &self.references[k], &self.model, self.config.dt);
            let fm = predict_step_force(&AugmentedError::from_vector(&xm), &tau, &self.references[k], &self.model, self.config.dt);
            a.set_column(i, &((fp.to_vector() - fm.to_vector()) / (2.0 * h)));
        }
        a
    }

    pub(crate) fn stage_sqrt(&self) -> &SMatrix<f64, 9, 9> {
        &self.q_stage_sqrt
    }

    pub(crate) fn r_sqrt(&self) -> &Matrix4<f64> {
        &self.r_sqrt
    }

    /// Per-variable box bounds; step 0 also carries the rate box.
    pub(crate) fn variable_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let (lo0, hi0) = self.limits.step_bounds(&self.u_prev, self.config.dt);
        let nv = self.free.len();
        let mut lo = DVector::zeros(nv);
        let mut hi = DVector::zeros(nv);
        for (c, &(k, j)) in self.free.iter().enumerate() {
            if k == 0 {
                lo[c] = lo0[j];
                hi[c] = hi0[j];
            } else {
                lo[c] = self.limits.u_min[j];
                hi[c] = self.limits.u_max[j];
            }
        }
        (lo, hi)
    }

    /// Lyapunov Hessian block for `xi_1` (heading of `xi_1` is independent
    /// of `u_0`, so this is exact).
    pub(crate) fn terminal_matrix(&self, xi: &AugmentedError, k: usize) -> SMatrix<f64, 9, 9> {
        backstepping::lyapunov_matrix(&self.model.gains, &self.model.hydro, self.references[k].eta_d[2] + xi.eta_tilde[2])
    }

    pub(crate) fn lyapunov_gradient_at(&self, xi: &AugmentedError, k: usize) -> XiVector {
        backstepping::lyapunov_gradient(xi, &self.model.gains, &self.model.hydro, self.references[k].eta_d[2] + xi.eta_tilde[2])
    }
}

/// Feasible baseline move: the auxiliary law under the mode's allocation,
/// projected onto the input limits.
#[allow(clippy::too_many_arguments)]
pub fn fallback_move(
    state: &VehicleState,
    reference: &ReferenceSignal,
    mode: &FaultParameters,
    model: &PredictionModel,
    limits: &InputLimits,
    u_prev: &ThrustCommand,
    dt: f64,
    epsilon: f64,
) -> Result<ThrustCommand> {
    backstepping::bsc_controller(
        state,
        reference,
        &model.gains,
        &model.hydro,
        mode,
        &model.layout,
        limits,
        u_prev,
        dt,
        epsilon,
    )
}

/// Shift the previous sequence by one and append the damped least-squares
/// allocation of `tau_target`; without a previous sequence, allocate
/// `tau_target` at every step.
pub fn warm_start(
    mode: &FaultParameters,
    layout: &ThrusterLayout,
    tau_target: &Vector3<f64>,
    previous: Option<&[ThrustCommand]>,
    horizon: usize,
    epsilon: f64,
) -> Result<Vec<ThrustCommand>> {
    let tail = allocation::allocate_damped(tau_target, mode, layout, epsilon)?;
    Ok(match previous {
        Some(prev) if !prev.is_empty() => {
            let mut seq: Vec<ThrustCommand> = prev.iter().skip(1).take(horizon).copied().collect();
            while seq.len() < horizon {
                seq.push(tail);
            }
            seq
        }
        _ => vec![tail; horizon],
    })
}

#[cfg(test)]
mod tests;
