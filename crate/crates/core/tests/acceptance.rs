//! Acceptance gate: one PASS/FAIL line per criterion. Quantities that
//! certify the controller are recomputed here from first principles rather
//! than read back from the library.
//!
//! Failing criteria are always reported. The exit status reflects them only
//! when `ALMPC_ACCEPTANCE_STRICT=1`, so the regular test run stays usable
//! while known gaps are open.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::time::Instant;

use almpc::allocation::{allocate_damped, FaultParameters, ThrustCommand, ThrusterLayout};
use almpc::backstepping::{auxiliary_law, coriolis_star, error_variables, inertia_star_dot, lyapunov_v2, AugmentedError, BackstepGains, ReferenceSignal};
use almpc::dynamics::{coriolis, integrate_feedback, rotation, HydroModel, VehicleState};
use almpc::estimation::{mix_prior, posterior_update, ukf_step, ModeBelief, ModeId, ModeLibrary, PlantProcess, UkfParams, UkfState};
use almpc::scenario::{read_log, reference, run, write_log, CaseId, ControllerKind, RunLog, ScenarioConfig, Timing};
use almpc::supervisor::{hysteresis_step, FusionConfig, SupervisorState};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---- independent model pieces -------------------------------------------

/// `T(theta) Gamma u` from the layout geometry.
fn thrust_force(u: &ThrustCommand, mode: &FaultParameters, layout: &ThrusterLayout) -> Vector3<f64> {
    let mut tau = Vector3::zeros();
    for i in 0..4 {
        let (s, c) = mode.theta[i].sin_cos();
        let d = layout.directions[i];
        let (fx, fy) = (c * d.x - s * d.y, s * d.x + c * d.y);
        let p = layout.positions[i];
        let f = mode.gamma[i] * u[i];
        tau += f * Vector3::new(fx, fy, p.x * fy - p.y * fx);
    }
    tau
}

fn yaw_rotation(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn yaw_rotation_derivative(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Euler step of the error state written through the physical state:
/// `eta~' = eta' - eta_d'` and `s' = eta'' - eta_d'' + eta~'`.
fn oracle_step(xi: &AugmentedError, tau: &Vector3<f64>, r: &ReferenceSignal, hydro: &HydroModel, gains: &BackstepGains, dt: f64) -> AugmentedError {
    let eta = r.eta_d + xi.eta_tilde;
    let eta_dot = xi.s + r.eta_d_dot - xi.eta_tilde;
    let j = yaw_rotation(eta[2]);
    let nu = j.transpose() * eta_dot;
    let p = hydro.inertia() * nu;
    let c = Matrix3::new(0.0, 0.0, -p[1], 0.0, 0.0, p[0], p[1], -p[0], 0.0);
    let d = hydro.linear_damping() + Matrix3::from_diagonal(&hydro.quadratic_damping().component_mul(&nu.abs()));
    let nu_dot = hydro.inertia().try_inverse().unwrap() * (tau + xi.d - c * nu - d * nu);
    let eta_ddot = yaw_rotation_derivative(eta[2]) * nu * nu[2] + j * nu_dot;
    let e_dot = eta_dot - r.eta_d_dot;
    let s_dot = eta_ddot - r.eta_d_ddot + e_dot;
    AugmentedError {
        eta_tilde: xi.eta_tilde + dt * e_dot,
        s: xi.s + dt * s_dot,
        d: xi.d - dt * xi.d.component_mul(&gains.lambda),
    }
}

fn oracle_v(xi: &AugmentedError, r: &ReferenceSignal, hydro: &HydroModel, gains: &BackstepGains) -> f64 {
    let j = yaw_rotation(r.eta_d[2] + xi.eta_tilde[2]);
    let m_star = j * hydro.inertia() * j.transpose();
    0.5 * xi.eta_tilde.dot(&(gains.kp * xi.eta_tilde)) + 0.5 * xi.s.dot(&(m_star * xi.s)) + 0.5 * xi.d.dot(&(gains.pd * xi.d))
}

/// `V(xi_1) - V(xi_0) + alpha |eta~_0|^2` evaluated by the oracle.
#[allow(clippy::too_many_arguments)]
fn contraction_residual(
    cfg: &ScenarioConfig,
    xi0: &AugmentedError,
    u0: &ThrustCommand,
    mode: ModeId,
    r0: &ReferenceSignal,
    r1: &ReferenceSignal,
) -> f64 {
    let tau = thrust_force(u0, cfg.library.parameters(mode), &cfg.layout);
    let xi1 = oracle_step(xi0, &tau, r0, &cfg.hydro, &cfg.gains, cfg.dt);
    oracle_v(&xi1, r1, &cfg.hydro, &cfg.gains) - oracle_v(xi0, r0, &cfg.hydro, &cfg.gains) + cfg.ocp.alpha * xi0.eta_tilde.norm_squared()
}

// ---- shared closed-loop runs --------------------------------------------

struct Runs {
    case1_almpc: (ScenarioConfig, RunLog, f64),
    case1_bsc: RunLog,
    case2_almpc: (ScenarioConfig, RunLog, f64),
    case2_ampc: RunLog,
    case2_bsc: RunLog,
}

fn timed(case: CaseId, controller: ControllerKind) -> (ScenarioConfig, RunLog, f64) {
    let mut cfg = ScenarioConfig::for_case(case, controller);
    cfg.collect_telemetry = true;
    let start = Instant::now();
    let log = run(&cfg).expect("scenario runs");
    (cfg, log, start.elapsed().as_secs_f64())
}

fn runs() -> Runs {
    Runs {
        case1_almpc: timed(CaseId::One, ControllerKind::Almpc),
        case1_bsc: timed(CaseId::One, ControllerKind::Bsc).1,
        case2_almpc: timed(CaseId::Two, ControllerKind::Almpc),
        case2_ampc: timed(CaseId::Two, ControllerKind::Ampc).1,
        case2_bsc: timed(CaseId::Two, ControllerKind::Bsc).1,
    }
}

// ---- criteria -------------------------------------------------------------

fn structural() -> Verdict {
    let start = Instant::now();
    let hydro = HydroModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut orth, mut skew, mut work, mut mstar) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let psi = rng.random_range(-10.0..10.0);
        let j = rotation(psi);
        orth = orth.max((j.transpose() * j - Matrix3::identity()).amax());
        let nu = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let c = coriolis(&hydro, &nu);
        skew = skew.max((c + c.transpose()).amax());
        work = work.max(nu.dot(&(c * nu)).abs());
        let s = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        let q = s.dot(&((inertia_star_dot(&hydro, psi, nu[2]) - 2.0 * coriolis_star(&hydro, &nu, psi)) * s));
        mstar = mstar.max(q.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        orth <= 1e-12 && skew <= 1e-12 && work <= 1e-10 && mstar <= 1e-9 && secs < 10.0,
        format!("orthogonality {orth:.1e}, skew {skew:.1e}, nu'C nu {work:.1e}, s'(M*'-2C*)s {mstar:.1e}, {secs:.2} s"),
    )
}

fn auxiliary_decay() -> Verdict {
    let hydro = HydroModel::default();
    let gains = BackstepGains::default();
    let law = |t: f64, s: &VehicleState| auxiliary_law(s, &reference(t, CaseId::One), &gains, &hydro);
    let mut state = VehicleState::new(Vector3::new(0.5, 0.0, 0.0), Vector3::zeros());
    let (period, sub) = (0.1, 10);
    let h = period / sub as f64;
    let mut samples = Vec::new();
    for k in 0..=300 {
        let t = k as f64 * period;
        let ev = error_variables(&state, &reference(t, CaseId::One));
        samples.push(lyapunov_v2(&ev.eta_tilde, &ev.s, &gains, &hydro, state.eta[2]));
        for i in 0..sub {
            state = integrate_feedback(&hydro, &state, t + i as f64 * h, h, law).expect("finite");
        }
    }
    let worst = samples.windows(2).skip(1).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    verdict(worst <= 1e-6, format!("largest sampled increase {worst:.2e} over {} samples, V2 {:.2e} -> {:.2e}", samples.len(), samples[0], samples[samples.len() - 1]))
}

fn contraction_certificate(r: &Runs) -> Verdict {
    let (cfg, log, _) = &r.case2_almpc;
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    for rec in log.telemetry.iter().filter(|t| t.contraction_enforced && t.status == almpc::lmpc::SolveStatus::Optimal) {
        worst = worst.max(contraction_residual(cfg, &rec.xi0, &rec.u0, rec.mode, &rec.ref0, &rec.ref1));
        checked += 1;
    }
    let fallback = log.summary.fallback_steps as f64 / log.rows.len() as f64;
    verdict(
        checked > 0 && worst <= 1e-8 && fallback < 0.02,
        format!("{checked} optimal solves, worst residual {worst:.2e}; fallback {:.2} % of {} steps", 100.0 * fallback, log.rows.len()),
    )
}

fn estimator_suite(r: &Runs) -> Verdict {
    let mut norm_err = 0.0f64;
    for log in [&r.case1_almpc.1, &r.case2_almpc.1, &r.case2_ampc] {
        for row in &log.rows {
            norm_err = norm_err.max((row.p1 + row.p2 + row.p3 - 1.0).abs());
        }
    }
    let t = *ModeLibrary::default().transition();
    let mut lse_ok = true;
    for ell in [Vector3::new(-1e6, -1e6 + 5.0, -2.0), Vector3::new(-1e6, -1e6, -1e6), Vector3::new(0.0, -1e6, -1e6)] {
        let p = posterior_update(&mix_prior(&Vector3::new(0.2, 0.3, 0.5), &t), &ell);
        lse_ok &= p.iter().all(|v| v.is_finite()) && (p.sum() - 1.0).abs() <= 1e-12;
    }
    let mut belief = ModeBelief::new(0.9995).unwrap();
    for _ in 0..5000 {
        belief.update(&Vector3::repeat(-1.25), &t);
    }
    let uniform = (belief.p - Vector3::repeat(1.0 / 3.0)).amax();

    // UKF against a Kalman filter on the plant linearized at a cruise point
    let process = PlantProcess { hydro: HydroModel::default(), layout: ThrusterLayout::default(), dt: 0.1, substeps: 10 };
    let u = ThrustCommand::new(60.0, 40.0, 60.0, 40.0);
    let x0 = Vector6::new(1.0, -0.5, 0.2, 0.4, 0.05, 0.02);
    let nominal = FaultParameters::nominal();
    let f0 = process.propagate(&x0, &u, &nominal);
    let mut a = Matrix6::zeros();
    for j in 0..6 {
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        a.set_column(j, &((process.propagate(&xp, &u, &nominal) - process.propagate(&xm, &u, &nominal)) / 2e-6));
    }
    let b = f0 - a * x0;
    let q = almpc::estimation::default_process_noise();
    let rn = almpc::estimation::default_measurement_noise();
    let params = UkfParams { jitter: 0.0, ..UkfParams::default() };
    let mut ukf = UkfState::new(x0, rn, q, rn).unwrap();
    let (mut kx, mut kp) = (x0, rn);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut truth = x0;
    let mut kf_err = 0.0f64;
    for _ in 0..50 {
        truth = a * truth + b;
        let y = truth + Vector6::from_fn(|_, _| rng.random_range(-0.05..0.05));
        let upd = ukf_step(&ukf, &y, &params, |x| a * x + b).unwrap();
        let xp = a * kx + b;
        let pp = a * kp * a.transpose() + q;
        let gain = pp * (pp + rn).try_inverse().unwrap();
        kx = xp + gain * (y - xp);
        kp = (Matrix6::identity() - gain) * pp;
        kp = (kp + kp.transpose()) * 0.5;
        kf_err = kf_err.max((upd.state.mean - kx).amax()).max((upd.state.covariance - kp).amax());
        ukf = upd.state;
    }
    verdict(
        norm_err <= 1e-12 && lse_ok && uniform <= 1e-3 && kf_err <= 1e-6,
        format!("normalization {norm_err:.1e}, log-sum-exp finite {lse_ok}, uniform gap {uniform:.1e}, UKF vs KF {kf_err:.1e}"),
    )
}

fn timing_text(v: &Timing) -> String {
    v.to_string()
}

fn within(v: &Timing, bound: f64) -> bool {
    v.seconds().is_some_and(|s| s <= bound)
}

fn detection(r: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, (_, log, secs)) in [("I", &r.case1_almpc), ("II", &r.case2_almpc)] {
        pass &= *secs <= 300.0;
        for tr in &log.summary.transitions {
            let ok = within(&tr.t_det, 1.0) && within(&tr.t_acc, 1.5);
            pass &= ok;
            parts.push(format!(
                "case {name} @{:.0} s: T_det {} (confirmed {}), T_acc {} (confirmed {})",
                tr.t_fault,
                timing_text(&tr.t_det),
                timing_text(&tr.t_det_confirmed),
                timing_text(&tr.t_acc),
                timing_text(&tr.t_acc_confirmed)
            ));
        }
        parts.push(format!("run {secs:.1} s"));
    }
    verdict(pass, parts.join("; "))
}

fn tracking_thresholds(r: &Runs) -> Verdict {
    let (_, log, _) = &r.case1_almpc;
    let tr = &log.summary.transitions[0];
    let Some(t_acc) = tr.t_acc.seconds() else {
        return verdict(false, "accommodation never reached");
    };
    let from = tr.t_fault + t_acc + 2.0;
    let steady = log.rows.iter().filter(|row| row.t > from).map(|row| row.e_x.abs().max(row.e_y.abs())).fold(0.0, f64::max);
    let bsc_peak = r.case1_bsc.rows.iter().filter(|row| row.t >= tr.t_fault).map(|row| row.e_x.abs()).fold(0.0, f64::max);
    verdict(steady < 0.15 && bsc_peak > 0.5, format!("ALMPC max |e| after {from:.1} s = {steady:.4} m; BSC post-fault max |e_x| = {bsc_peak:.3} m"))
}

fn ordering(r: &Runs) -> Verdict {
    let a = &r.case2_almpc.1.summary.metrics;
    let m = &r.case2_ampc.summary.metrics;
    let b = &r.case2_bsc.summary.metrics;
    let mut failures = Vec::new();
    for (axis, (aa, mm, bb)) in [("x", (&a.x, &m.x, &b.x)), ("y", (&a.y, &m.y, &b.y))] {
        if !(aa.rmse < mm.rmse && mm.rmse < bb.rmse) {
            failures.push(format!("RMSE {axis} {:.4}/{:.4}/{:.4}", aa.rmse, mm.rmse, bb.rmse));
        }
        if !(aa.iae < mm.iae && mm.iae < bb.iae) {
            failures.push(format!("IAE {axis} {:.4}/{:.4}/{:.4}", aa.iae, mm.iae, bb.iae));
        }
    }
    if !(a.psi.rmse <= m.psi.rmse) {
        failures.push(format!("RMSE psi {:.4}/{:.4}", a.psi.rmse, m.psi.rmse));
    }
    let table = format!(
        "RMSE x {:.4}/{:.4}/{:.4} y {:.4}/{:.4}/{:.4} psi {:.4}/{:.4}; IAE x {:.4}/{:.4}/{:.4} y {:.4}/{:.4}/{:.4}",
        a.x.rmse, m.x.rmse, b.x.rmse, a.y.rmse, m.y.rmse, b.y.rmse, a.psi.rmse, m.psi.rmse, a.x.iae, m.x.iae, b.x.iae, a.y.iae, m.y.iae, b.y.iae
    );
    if failures.is_empty() {
        verdict(true, table)
    } else {
        verdict(false, format!("{table}; violated: {}", failures.join(", ")))
    }
}

fn jensen(r: &Runs) -> Verdict {
    let (cfg, log, _) = &r.case2_almpc;
    let eligible: Vec<_> = log.blends.iter().filter(|b| b.all_optimal && b.raw_feasible).collect();
    let ok = eligible
        .iter()
        .filter(|b| contraction_residual(cfg, &b.xi0, &b.u_raw, b.mode, &b.ref0, &b.ref1) <= 1e-6)
        .count();
    let share = if eligible.is_empty() { 0.0 } else { ok as f64 / eligible.len() as f64 };
    verdict(
        !eligible.is_empty() && share >= 0.95,
        format!("{ok}/{} eligible blended steps contract ({} blended in total)", eligible.len(), log.blends.len()),
    )
}

fn determinism_and_io() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::for_case(CaseId::Two, ControllerKind::Almpc);
    cfg.seed = 21;
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_log(&a.rows, &pa).unwrap();
    write_log(&b.rows, &pb).unwrap();
    let identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    let round_trip = read_log(&pa).map(|rows| rows == a.rows).unwrap_or(false);

    let layout = ThrusterLayout::default();
    let library = ModeLibrary::default();
    let eps = FusionConfig::default().epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for (_, mode) in library.modes() {
        for _ in 0..1000 {
            let u = Vector4::from_fn(|i, _| if mode.is_blocked(i) { 0.0 } else { rng.random_range(-500.0..500.0) });
            let tau = thrust_force(&u, mode, &layout);
            let back = allocate_damped(&tau, mode, &layout, eps).unwrap();
            worst = worst.max((thrust_force(&back, mode, &layout) - tau).norm());
        }
    }
    verdict(
        identical && round_trip && worst <= 1e-6,
        format!("byte-identical {identical}, round trip {round_trip}, worst allocation residual {worst:.1e} N"),
    )
}

/// Reference supervisor written from the lock rules alone: lock when the
/// trailing run of samples confirming one mode reaches `n_on`, unlock when
/// the trailing run at or below `p_off` since locking reaches `n_off`.
fn oracle_locks(stream: &[Vector3<f64>], cfg: &FusionConfig) -> Vec<Option<usize>> {
    let mut locked: Option<(usize, usize)> = None;
    let mut out = Vec::with_capacity(stream.len());
    for k in 0..stream.len() {
        if let Some((m, since)) = locked {
            let run = stream[since + 1..=k].iter().rev().take_while(|p| p[m] <= cfg.p_off).count();
            if run >= cfg.n_off as usize {
                locked = None;
            }
        }
        if locked.is_none() {
            let lead = stream[k].imax();
            let run = stream[..=k].iter().rev().take_while(|p| p.imax() == lead && p[lead] >= cfg.p_on).count();
            if run >= cfg.n_on as usize {
                locked = Some((lead, k));
            }
        }
        out.push(locked.map(|(m, _)| m));
    }
    out
}

fn hysteresis_suite() -> Verdict {
    let cfg = FusionConfig::default();
    let confirm_i = Vector3::new(0.99, 0.005, 0.005);
    let confirm_ii = Vector3::new(0.005, 0.99, 0.005);
    let middling = Vector3::new(0.9, 0.05, 0.05);
    let low = Vector3::new(0.5, 0.45, 0.05);
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    let mut check = |stream: &[Vector3<f64>]| {
        let mut sup = SupervisorState::new();
        let expected = oracle_locks(stream, &cfg);
        for (k, p) in stream.iter().enumerate() {
            hysteresis_step(&mut sup, p, &cfg);
            if sup.locked_mode.map(ModeId::index) != expected[k] {
                mismatches += 1;
                return;
            }
        }
        cases += 1;
    };
    // every confirm/non-confirm pattern up to 16 samples: locks exactly at the 10th consecutive confirmation
    for len in 1..=16 {
        for bits in 0u32..(1 << len) {
            let stream: Vec<_> = (0..len).map(|i| if bits & (1 << i) != 0 { confirm_i } else { low }).collect();
            check(&stream);
        }
    }
    // locked on mode I, then every 8-sample pattern over four posterior shapes
    let alphabet = [confirm_i, confirm_ii, middling, low];
    for code in 0u32..(1 << 16) {
        let mut stream = vec![confirm_i; 10];
        stream.extend((0..8).map(|i| alphabet[((code >> (2 * i)) & 3) as usize]));
        check(&stream);
    }
    // explicit counts
    let mut sup = SupervisorState::new();
    let lock_at = (0..20).position(|_| hysteresis_step(&mut sup, &confirm_i, &cfg).is_some()).map(|k| k + 1);
    let unlock_at = (0..20).position(|_| hysteresis_step(&mut sup, &low, &cfg).is_some()).map(|k| k + 1);
    let pass = mismatches == 0 && lock_at == Some(10) && unlock_at == Some(5);
    verdict(pass, format!("{cases} sequences agree with the rule oracle, {mismatches} disagree; lock after {lock_at:?}, unlock after {unlock_at:?} samples"))
}

fn main() {
    let start = Instant::now();
    let shared = runs();
    let results = [
        ("1 structural properties", structural()),
        ("2 auxiliary-law decay", auxiliary_decay()),
        ("3 contraction certificate", contraction_certificate(&shared)),
        ("4 estimator suite", estimator_suite(&shared)),
        ("5 detection/accommodation", detection(&shared)),
        ("6 tracking thresholds", tracking_thresholds(&shared)),
        ("7 comparative ordering", ordering(&shared)),
        ("8 blended contraction", jensen(&shared)),
        ("9 determinism and I/O", determinism_and_io()),
        ("10 hysteresis suite", hysteresis_suite()),
    ];
    println!();
    for (name, v) in &results {
        println!("[{}] criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed ({:.1} s)", results.len() - failed, start.elapsed().as_secs_f64());
    let strict = std::env::var("ALMPC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
