//! Closed-loop simulation of one scenario.

use nalgebra::{Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ControllerKind, FeedbackSource, ScenarioConfig};
use super::io::{LockEventRecord, LogRow, RunSummary, Timing, TransitionSummary};
use super::metrics::metrics_from_errors;
use super::reference::{reference, reference_horizon, HeadingUnwrap};
use crate::allocation::{self, FaultParameters, ThrustCommand};
use crate::backstepping::{self, pose_error, AugmentedError, ReferenceSignal};
use crate::dynamics::{integrate_plant, Disturbance, VehicleState};
use crate::error::{Error, Result};
use crate::estimation::{FilterBank, ModeId, PlantProcess};
use crate::lmpc::{self, build_ocp, solve_ocp, OcpSolution, PredictionModel, SolveStatus};
use crate::supervisor::{self, LockEvent, SupervisorState};

/// One horizon solve, kept for independent re-verification.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpRecord {
    pub step: usize,
    pub t: f64,
    pub mode: ModeId,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub cost: f64,
    pub first_step_descent: f64,
    pub descent_bound: f64,
    pub contraction_enforced: bool,
    pub u0: ThrustCommand,
    pub xi0: AugmentedError,
    pub ref0: ReferenceSignal,
    pub ref1: ReferenceSignal,
}

/// Fused-command contraction check on a blended step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendRecord {
    pub step: usize,
    /// Every mode problem returned `optimal`.
    pub all_optimal: bool,
    /// The unprojected fused command already met the limits.
    pub raw_feasible: bool,
    /// `V(xi_1) - V(xi_0) + alpha |eta~_0|^2` for the unprojected command.
    pub margin: f64,
    /// Mode whose parameters allocated the blended force.
    pub mode: ModeId,
    pub u_raw: ThrustCommand,
    pub xi0: AugmentedError,
    pub ref0: ReferenceSignal,
    pub ref1: ReferenceSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub summary: RunSummary,
    pub telemetry: Vec<OcpRecord>,
    pub blends: Vec<BlendRecord>,
    /// True thruster parameters at each logged sample.
    pub true_faults: Vec<FaultParameters>,
}

fn mode_code(m: Option<ModeId>) -> u8 {
    m.map(|m| m.index() as u8 + 1).unwrap_or(0)
}

struct ControlOutput {
    u: ThrustCommand,
    tau: Vector3<f64>,
    alloc_mode: Option<ModeId>,
    status: String,
    iterations: u32,
    kkt: f64,
    descent_margin: Option<f64>,
    jensen_margin: Option<f64>,
    fallback: bool,
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    model: PredictionModel,
    bank: Option<FilterBank>,
    sup: SupervisorState,
    warm: [Option<Vec<ThrustCommand>>; 3],
    telemetry: Vec<OcpRecord>,
    blends: Vec<BlendRecord>,
    solves: usize,
    optimal: usize,
}

impl Runner<'_> {
    #[allow(clippy::too_many_arguments)]
    fn solve_mode(
        &mut self,
        step: usize,
        t: f64,
        mode: ModeId,
        state: &VehicleState,
        refs: &[ReferenceSignal],
        u_prev: &ThrustCommand,
        constrained: bool,
    ) -> Result<OcpSolution> {
        let cfg = self.cfg;
        let params = *cfg.library.parameters(mode);
        let xi0 = backstepping::error_variables(state, &refs[0]).augmented(Vector3::zeros());
        let tau_b = backstepping::auxiliary_law(state, &refs[0], &cfg.gains, &cfg.hydro);
        let ocp_cfg = if constrained { cfg.ocp.clone() } else { cfg.ocp.unconstrained_variant() };
        let ws = lmpc::warm_start(
            &params,
            &cfg.layout,
            &tau_b,
            self.warm[mode.index()].as_deref(),
            ocp_cfg.horizon,
            cfg.warm_start_epsilon,
        )?;
        let ocp = build_ocp(xi0, refs.to_vec(), params, *u_prev, cfg.limits, ocp_cfg, self.model.clone())?;
        let sol = solve_ocp(&ocp, &ws).map_err(|e| match e {
            Error::SolverDivergence { iterations } => Error::SolverDivergence { iterations },
            other => other,
        })?;
        self.warm[mode.index()] = Some(sol.u_sequence.clone());
        self.solves += 1;
        if sol.status == SolveStatus::Optimal {
            self.optimal += 1;
        }
        if cfg.collect_telemetry {
            self.telemetry.push(OcpRecord {
                step,
                t,
                mode,
                status: sol.status,
                iterations: sol.iterations,
                kkt_residual: if sol.kkt_residual.is_finite() { sol.kkt_residual } else { 0.0 },
                cost: sol.cost,
                first_step_descent: sol.first_step_descent,
                descent_bound: sol.descent_bound,
                contraction_enforced: constrained,
                u0: sol.u_sequence[0],
                xi0,
                ref0: refs[0],
                ref1: refs[1],
            });
        }
        Ok(sol)
    }

    fn control(
        &mut self,
        step: usize,
        t: f64,
        state: &VehicleState,
        refs: &[ReferenceSignal],
        u_prev: &ThrustCommand,
        p: &Vector3<f64>,
    ) -> Result<ControlOutput> {
        let cfg = self.cfg;
        match cfg.controller {
            ControllerKind::Bsc => {
                let tau = backstepping::auxiliary_law(state, &refs[0], &cfg.gains, &cfg.hydro);
                let u = backstepping::bsc_controller(
                    state,
                    &refs[0],
                    &cfg.gains,
                    &cfg.hydro,
                    &FaultParameters::nominal(),
                    &cfg.layout,
                    &cfg.limits,
                    u_prev,
                    cfg.dt,
                    cfg.fusion.epsilon,
                )?;
                Ok(ControlOutput {
                    u,
                    tau,
                    alloc_mode: None,
                    status: "none".into(),
                    iterations: 0,
                    kkt: 0.0,
                    descent_margin: None,
                    jensen_margin: None,
                    fallback: false,
                })
            }
            ControllerKind::Ampc => {
                let mode = self.sup.confirmed_mode.unwrap_or(ModeId::I);
                for m in ModeId::ALL {
                    if m != mode {
                        self.warm[m.index()] = None;
                    }
                }
                let sol = self.solve_mode(step, t, mode, state, refs, u_prev, false)?;
                let u = allocation::project_input(&sol.u_sequence[0], u_prev, &cfg.limits, cfg.dt);
                let tau = allocation::generalized_force(&u, cfg.library.parameters(mode), &cfg.layout);
                Ok(ControlOutput {
                    u,
                    tau,
                    alloc_mode: Some(mode),
                    status: sol.status.to_string(),
                    iterations: sol.iterations as u32,
                    kkt: finite_or_zero(sol.kkt_residual),
                    descent_margin: None,
                    jensen_margin: None,
                    fallback: sol.status == SolveStatus::InfeasibleFallback,
                })
            }
            ControllerKind::Almpc => self.almpc(step, t, state, refs, u_prev, p),
        }
    }

    fn almpc(
        &mut self,
        step: usize,
        t: f64,
        state: &VehicleState,
        refs: &[ReferenceSignal],
        u_prev: &ThrustCommand,
        p: &Vector3<f64>,
    ) -> Result<ControlOutput> {
        let cfg = self.cfg;
        let locked = self.sup.locked_mode;
        let active: Vec<ModeId> = match locked {
            Some(m) => vec![m],
            None if cfg.fusion.blend_enabled => ModeId::ALL.to_vec(),
            None => vec![self.sup.allocation_mode(p)],
        };
        let weights = if active.len() == 1 {
            let mut w = Vector3::zeros();
            w[active[0].index()] = 1.0;
            w
        } else {
            *p
        };
        let mut taus = [Vector3::zeros(); 3];
        let mut solutions: Vec<(ModeId, OcpSolution)> = Vec::with_capacity(active.len());
        for m in ModeId::ALL {
            if !active.contains(&m) {
                self.warm[m.index()] = None;
            }
        }
        for &m in &active {
            let sol = self.solve_mode(step, t, m, state, refs, u_prev, true)?;
            taus[m.index()] = allocation::generalized_force(&sol.u_sequence[0], cfg.library.parameters(m), &cfg.layout);
            solutions.push((m, sol));
        }
        let tau_blend = supervisor::blend_force(&taus, &weights);
        let fused = supervisor::fuse_command(
            &tau_blend,
            &weights,
            locked,
            &cfg.library,
            &cfg.layout,
            &cfg.limits,
            u_prev,
            cfg.dt,
            cfg.fusion.epsilon,
        )?;

        let fallback = solutions.iter().any(|(_, s)| s.status == SolveStatus::InfeasibleFallback);
        let status = if fallback {
            SolveStatus::InfeasibleFallback
        } else if solutions.iter().any(|(_, s)| s.status == SolveStatus::MaxIter) {
            SolveStatus::MaxIter
        } else {
            SolveStatus::Optimal
        };
        let descent_margin = solutions
            .iter()
            .filter(|(_, s)| s.status != SolveStatus::InfeasibleFallback)
            .map(|(_, s)| s.descent_margin())
            .reduce(f64::max);

        let mut jensen_margin = None;
        if active.len() > 1 {
            let xi0 = solutions[0].1.xi_sequence[0];
            let params = cfg.library.parameters(fused.mode);
            let xi1 = lmpc::predict_step(&xi0, &fused.raw, params, &refs[0], &self.model, cfg.dt);
            let (dv, bound) = lmpc::contraction_check(&xi0, &xi1, &refs[0], &refs[1], &self.model, cfg.ocp.alpha);
            let (lo, hi) = cfg.limits.step_bounds(u_prev, cfg.dt);
            let raw_feasible = (0..4).all(|j| fused.raw[j] >= lo[j] - 1e-9 && fused.raw[j] <= hi[j] + 1e-9);
            let all_optimal = solutions.iter().all(|(_, s)| s.status == SolveStatus::Optimal);
            self.blends.push(BlendRecord {
                step,
                all_optimal,
                raw_feasible,
                margin: dv - bound,
                mode: fused.mode,
                u_raw: fused.raw,
                xi0,
                ref0: refs[0],
                ref1: refs[1],
            });
            jensen_margin = Some(dv - bound);
        }

        Ok(ControlOutput {
            u: fused.applied,
            tau: tau_blend,
            alloc_mode: Some(fused.mode),
            status: status.to_string(),
            iterations: solutions.iter().map(|(_, s)| s.iterations as u32).max().unwrap_or(0),
            kkt: solutions.iter().map(|(_, s)| finite_or_zero(s.kkt_residual)).fold(0.0, f64::max),
            descent_margin,
            jensen_margin,
            fallback,
        })
    }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Run a scenario, returning the log up to the failure point together with
/// the error if the run aborted.
pub fn run_partial(config: &ScenarioConfig) -> (RunLog, Option<Error>) {
    let mut rows = Vec::new();
    let mut true_faults = Vec::new();
    let mut runner = Runner {
        cfg: config,
        model: PredictionModel::new(config.hydro.clone(), config.layout.clone(), config.gains),
        bank: None,
        sup: SupervisorState::new(),
        warm: [None, None, None],
        telemetry: Vec::new(),
        blends: Vec::new(),
        solves: 0,
        optimal: 0,
    };
    let mut lock_events = Vec::new();
    let err = simulate(config, &mut runner, &mut rows, &mut true_faults, &mut lock_events).err();
    let summary = summarize(config, &rows, &runner, lock_events);
    (
        RunLog { rows, summary, telemetry: runner.telemetry, blends: runner.blends, true_faults },
        err,
    )
}

/// Run a scenario to completion.
pub fn run(config: &ScenarioConfig) -> Result<RunLog> {
    match run_partial(config) {
        (log, None) => Ok(log),
        (_, Some(e)) => Err(e),
    }
}

fn simulate(
    cfg: &ScenarioConfig,
    runner: &mut Runner<'_>,
    rows: &mut Vec<LogRow>,
    true_faults: &mut Vec<FaultParameters>,
    lock_events: &mut Vec<LockEventRecord>,
) -> Result<()> {
    cfg.validate()?;
    let steps = cfg.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut disturbance = if cfg.disturbance_bound.iter().any(|b| *b > 0.0) {
        Disturbance::uniform(cfg.disturbance_bound, cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
    } else {
        Disturbance::none()
    };
    let noise_l = cfg
        .r_ukf
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("measurement noise".into()))?
        .l();
    if cfg.controller.uses_estimator() {
        let process = PlantProcess { hydro: cfg.hydro.clone(), layout: cfg.layout.clone(), dt: cfg.dt, substeps: cfg.substeps };
        runner.bank = Some(FilterBank::new(cfg.library.clone(), process, cfg.ukf, cfg.q_ukf, cfg.r_ukf, cfg.rho)?);
    }
    let mut prev_label = Some(ModeId::I);
    for ev in cfg.schedule.events() {
        let label = cfg.library.identify(&ev.fault);
        runner.sup.record_fault(ev.t, prev_label, label);
        prev_label = label;
    }

    let mut state = cfg.initial_state;
    let mut u_prev = ThrustCommand::zeros();
    let mut unwrap = HeadingUnwrap::default();
    let h = cfg.dt / cfg.substeps as f64;

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let fault_now = cfg.schedule.at(t);
        let psi_d = unwrap.next(reference(t, cfg.case).eta_d[2]);
        let refs = reference_horizon(cfg.case, t, cfg.dt, cfg.ocp.horizon, psi_d);

        let mut p = Vector3::new(1.0, 0.0, 0.0);
        let mut nis = Vector3::zeros();
        if let Some(bank) = runner.bank.as_mut() {
            let mut y = state.to_vector();
            if cfg.measurement_noise {
                let z = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
                y += noise_l * z;
            }
            let out = if k == 0 {
                bank.initialize(&y)?;
                None
            } else {
                Some(bank.step(&u_prev, &y)?)
            };
            if let Some(out) = out {
                p = out.posterior;
                nis = out.nis;
                for ev in [
                    supervisor::hysteresis_step(&mut runner.sup, &p, &cfg.fusion),
                    supervisor::anomaly_check(&mut runner.sup, &nis, &cfg.fusion),
                ]
                .into_iter()
                .flatten()
                {
                    let (name, mode) = match ev {
                        LockEvent::Locked(m) => ("locked", m),
                        LockEvent::Unlocked(m) => ("unlocked", m),
                        LockEvent::AnomalyUnlocked(m) => ("anomaly-unlocked", m),
                    };
                    lock_events.push(LockEventRecord { t, event: name.into(), mode: mode.label().into() });
                }
            }
        }

        let e = pose_error(&state.eta, &refs[0].eta_d);
        let p_for_timers = runner.bank.as_ref().map(|_| p);
        supervisor::update_timers(&mut runner.sup, t, p_for_timers.as_ref(), (e[0], e[1]), &cfg.fusion);

        let feedback = match (cfg.feedback, runner.bank.as_ref().and_then(|b| b.filters())) {
            (FeedbackSource::Estimate, Some(filters)) => {
                let m = runner.sup.allocation_mode(&p);
                VehicleState::from_vector(&filters[m.index()].mean)
            }
            _ => state,
        };
        let out = runner.control(k, t, &feedback, &refs, &u_prev, &p)?;
        let xi0 = backstepping::error_variables(&feedback, &refs[0]).augmented(Vector3::zeros());
        let v = lmpc::lyapunov_at(&xi0, &refs[0], &runner.model);

        rows.push(LogRow {
            t,
            x: state.eta[0],
            y: state.eta[1],
            psi: state.eta[2],
            u: state.nu[0],
            v: state.nu[1],
            r: state.nu[2],
            x_d: refs[0].eta_d[0],
            y_d: refs[0].eta_d[1],
            psi_d: refs[0].eta_d[2],
            e_x: e[0],
            e_y: e[1],
            e_psi: e[2],
            u1: out.u[0],
            u2: out.u[1],
            u3: out.u[2],
            u4: out.u[3],
            tau_x: out.tau[0],
            tau_y: out.tau[1],
            tau_n: out.tau[2],
            p1: p[0],
            p2: p[1],
            p3: p[2],
            nis1: nis[0],
            nis2: nis[1],
            nis3: nis[2],
            true_mode: mode_code(cfg.library.identify(&fault_now)),
            locked_mode: mode_code(runner.sup.locked_mode),
            alloc_mode: mode_code(out.alloc_mode),
            status: out.status,
            sqp_iterations: out.iterations,
            kkt_residual: out.kkt,
            lyapunov: v,
            descent_margin: out.descent_margin,
            jensen_margin: out.jensen_margin,
            fallback: u8::from(out.fallback),
        });
        true_faults.push(fault_now);

        if k == steps {
            break;
        }
        let w = disturbance.sample();
        for i in 0..cfg.substeps {
            let fault = cfg.schedule.at(t + i as f64 * h);
            let tau = allocation::generalized_force(&out.u, &fault, &cfg.layout);
            state = integrate_plant(&cfg.hydro, &state, &tau, &w, h).map_err(|e| match e {
                Error::IntegrationBlowup { .. } => Error::IntegrationBlowup { t: t + (i + 1) as f64 * h },
                other => other,
            })?;
        }
        u_prev = out.u;
    }
    Ok(())
}

fn summarize(cfg: &ScenarioConfig, rows: &[LogRow], runner: &Runner<'_>, lock_events: Vec<LockEventRecord>) -> RunSummary {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let errors: Vec<[f64; 3]> = rows.iter().map(|r| [r.e_x, r.e_y, r.e_psi]).collect();
    let metrics = metrics_from_errors(&t, &errors).unwrap_or_default();
    let fallback_steps = rows.iter().filter(|r| r.fallback == 1).count();
    let estimator = cfg.controller.uses_estimator();
    let transitions = runner
        .sup
        .transitions
        .iter()
        .map(|tr| TransitionSummary {
            t_fault: tr.t_fault,
            from: tr.from.map(|m| m.label().to_string()).unwrap_or_else(|| "custom".into()),
            to: tr.to.map(|m| m.label().to_string()).unwrap_or_else(|| "custom".into()),
            t_det: if estimator { Timing::from_option(tr.t_det) } else { Timing::not_applicable() },
            t_det_confirmed: if estimator { Timing::from_option(tr.t_det_confirmed) } else { Timing::not_applicable() },
            t_acc: Timing::from_option(tr.t_acc),
            t_acc_confirmed: Timing::from_option(tr.t_acc_confirmed),
        })
        .collect();
    RunSummary {
        case: cfg.case.number(),
        controller: cfg.controller.to_string(),
        seed: cfg.seed,
        steps: rows.len().saturating_sub(1),
        total_time: cfg.total_time,
        horizon_solves: runner.solves,
        optimal_solves: runner.optimal,
        fallback_steps,
        fallback_fraction: if rows.is_empty() { 0.0 } else { fallback_steps as f64 / rows.len() as f64 },
        metrics,
        transitions,
        lock_events,
    }
}
