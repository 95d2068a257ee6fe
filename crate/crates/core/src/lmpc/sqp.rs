//! Sequential quadratic programming for the horizon problem.
//!
//! Gauss-Newton Hessian of the least-squares objective, plus the exact
//! curvature of the first-step contraction constraint weighted by its last
//! multiplier. Steps are globalized with an l1 merit function. Every returned
//! non-fallback sequence satisfies the contraction bound exactly on the
//! predictor: iterates start feasible and, if the final one is not, its first
//! input is pulled toward the minimizer of `V(xi_1)` until it is.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpProblem};
use super::{predict_step, reconstruct_state, Ocp, OcpSolution, SolveStatus};
use crate::allocation::ThrustCommand;
use crate::error::{Error, Result};

const SLACK_CURVATURE: f64 = 1e-3;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

struct Linearization {
    cost: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    terminal: f64,
    terminal_grad: DVector<f64>,
    descent: f64,
    descent_grad: DVector<f64>,
    descent_hess: DMatrix<f64>,
}

fn sens_add_input(s: &mut DMatrix<f64>, b: &nalgebra::SMatrix<f64, 9, 4>, ocp: &Ocp, k: usize) {
    for j in 0..4 {
        if let Some(c) = ocp.column(k, j) {
            for r in 0..9 {
                s[(r, c)] += b[(r, j)];
            }
        }
    }
}

fn linearize(ocp: &Ocp, z: &DVector<f64>) -> Linearization {
    let n = ocp.horizon();
    let nv = z.len();
    let seq = ocp.to_sequence(z);
    let xs = ocp.rollout(&seq);

    let mut sens = Vec::with_capacity(n + 1);
    sens.push(DMatrix::<f64>::zeros(9, nv));
    for k in 0..n {
        let a = ocp.state_jacobian(&xs[k], &seq[k], k);
        let a = DMatrix::from_column_slice(9, 9, a.as_slice());
        let mut next = &a * &sens[k];
        sens_add_input(&mut next, &ocp.input_jacobian(&xs[k], k), ocp, k);
        sens.push(next);
    }

    let mut grad = DVector::zeros(nv);
    let mut hess = DMatrix::zeros(nv, nv);
    let lq = ocp.stage_sqrt();
    let lqt = DMatrix::from_column_slice(9, 9, lq.transpose().as_slice());
    for k in 1..n {
        let jr = &lqt * &sens[k];
        let r = lq.transpose() * xs[k].to_vector();
        let r = DVector::from_column_slice(r.as_slice());
        grad += 2.0 * jr.transpose() * r;
        hess += 2.0 * jr.transpose() * &jr;
    }

    let lrt = ocp.r_sqrt().transpose();
    let mut prev = ocp.u_prev;
    for k in 0..n {
        let r = lrt * (seq[k] - prev);
        let mut jr = DMatrix::zeros(4, nv);
        for j in 0..4 {
            if let Some(c) = ocp.column(k, j) {
                for row in 0..4 {
                    jr[(row, c)] += lrt[(row, j)];
                }
            }
            if k > 0 {
                if let Some(c) = ocp.column(k - 1, j) {
                    for row in 0..4 {
                        jr[(row, c)] -= lrt[(row, j)];
                    }
                }
            }
        }
        let r = DVector::from_column_slice(r.as_slice());
        grad += 2.0 * jr.transpose() * r;
        hess += 2.0 * jr.transpose() * &jr;
        prev = seq[k];
    }

    let gv = ocp.lyapunov_gradient_at(&xs[n], n);
    let terminal_grad = sens[n].transpose() * DVector::from_column_slice(gv.as_slice());
    let pn = ocp.terminal_matrix(&xs[n], n);
    let pn = DMatrix::from_column_slice(9, 9, pn.as_slice());
    hess += sens[n].transpose() * &pn * &sens[n];
    grad += &terminal_grad;

    let g1 = ocp.lyapunov_gradient_at(&xs[1], 1);
    let descent_grad = sens[1].transpose() * DVector::from_column_slice(g1.as_slice());
    let p1 = ocp.terminal_matrix(&xs[1], 1);
    let p1 = DMatrix::from_column_slice(9, 9, p1.as_slice());
    let descent_hess = sens[1].transpose() * &p1 * &sens[1];

    Linearization {
        cost: ocp.cost_of(&seq, &xs),
        grad,
        hess,
        terminal: ocp.terminal_value(&xs),
        terminal_grad,
        descent: ocp.descent_residual(&seq[0]),
        descent_grad,
        descent_hess,
    }
}

struct Merit {
    terminal_weight: f64,
    terminal_level: f64,
    enforce_terminal: bool,
    enforce_descent: bool,
    tightening: f64,
}

impl Merit {
    fn terminal_violation(&self, v: f64) -> f64 {
        if self.enforce_terminal {
            (v - self.terminal_level).max(0.0)
        } else {
            0.0
        }
    }

    fn descent_violation(&self, g: f64) -> f64 {
        if self.enforce_descent {
            (g + self.tightening).max(0.0)
        } else {
            0.0
        }
    }

    fn value(&self, ocp: &Ocp, z: &DVector<f64>, mu: f64) -> f64 {
        let seq = ocp.to_sequence(z);
        let xs = ocp.rollout(&seq);
        ocp.cost_of(&seq, &xs)
            + self.terminal_weight * self.terminal_violation(ocp.terminal_value(&xs))
            + mu * self.descent_violation(ocp.descent_residual(&seq[0]))
    }
}

/// Free components of `u_0` that minimize `V(xi_1)` within the step-0
/// bounds, as a full free-variable vector block.
fn descent_minimizer(ocp: &Ocp) -> Result<ThrustCommand> {
    let (lo, hi) = ocp.variable_bounds();
    let mut u0 = ocp.pinned_inputs()[0];
    let cols: Vec<(usize, usize)> = (0..4).filter_map(|j| ocp.column(0, j).map(|c| (j, c))).collect();
    for &(j, _) in &cols {
        u0[j] = 0.0;
    }
    let xi1_at_zero = predict_step(&ocp.xi0, &u0, &ocp.mode, &ocp.references[0], &ocp.model, ocp.config.dt);
    let b = ocp.input_jacobian(&ocp.xi0, 0);
    let p1 = ocp.terminal_matrix(&xi1_at_zero, 1);
    let m = cols.len();
    let mut bf = DMatrix::zeros(9, m);
    for (i, &(j, _)) in cols.iter().enumerate() {
        bf.set_column(i, &DVector::from_column_slice(b.column(j).as_slice()));
    }
    let p1 = DMatrix::from_column_slice(9, 9, p1.as_slice());
    let c1 = DVector::from_column_slice(xi1_at_zero.to_vector().as_slice());
    let mut h = bf.transpose() * &p1 * &bf;
    let scale = h.diagonal().max().max(1e-300);
    for i in 0..m {
        h[(i, i)] += 1e-10 * scale;
    }
    let g = bf.transpose() * &p1 * c1;
    let mut a = DMatrix::zeros(2 * m, m);
    let mut bb = DVector::zeros(2 * m);
    for (i, &(_, c)) in cols.iter().enumerate() {
        a[(2 * i, i)] = 1.0;
        bb[2 * i] = lo[c];
        a[(2 * i + 1, i)] = -1.0;
        bb[2 * i + 1] = -hi[c];
    }
    let sol = solve_qp(&QpProblem { h, g, a, b: bb }, 1000)?;
    for (i, &(j, c)) in cols.iter().enumerate() {
        u0[j] = sol.x[i].clamp(lo[c], hi[c]);
    }
    Ok(u0)
}

/// Move `u_0` toward `target` until the contraction residual is below
/// `-tightening`, then re-project the tail for rate feasibility.
fn repair_first_step(ocp: &Ocp, seq: &[ThrustCommand], target: &ThrustCommand) -> Vec<ThrustCommand> {
    let tight = ocp.config.descent_tightening;
    let u0 = seq[0];
    let g = |th: f64| ocp.descent_residual(&(u0 + (target - u0) * th)) + tight;
    // g is a convex quadratic along the segment: g(0) > 0 >= g(1)
    let (g0, g1, gh) = (g(0.0), g(1.0), g(0.5));
    let a = 2.0 * (g1 + g0 - 2.0 * gh);
    let b = g1 - g0 - a;
    let mut theta = if a.abs() > 1e-300 {
        let disc = (b * b - 4.0 * a * g0).max(0.0);
        let roots = [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)];
        roots.iter().copied().filter(|r| *r >= 0.0 && *r <= 1.0).fold(1.0, f64::min)
    } else if b < 0.0 {
        (-g0 / b).clamp(0.0, 1.0)
    } else {
        1.0
    };
    // guard against rounding in the closed form
    let mut tries = 0;
    while g(theta) > 0.0 && tries < 60 {
        theta = (theta + (1.0 - theta) * 0.5 + 1e-12).min(1.0);
        tries += 1;
    }
    if g(theta) > 0.0 {
        theta = 1.0;
    }
    let mut out = seq.to_vec();
    out[0] = u0 + (target - u0) * theta;
    let first = out[0];
    let mut fixed = ocp.project_sequence(&out);
    // projection of step 0 must not move it (it is already feasible)
    fixed[0] = first;
    let mut prev = first;
    for u in fixed.iter_mut().skip(1) {
        *u = crate::allocation::project_input(u, &prev, &ocp.limits, ocp.config.dt);
        prev = *u;
    }
    ocp.project_sequence(&fixed)
}

fn assemble(
    ocp: &Ocp,
    seq: Vec<ThrustCommand>,
    status: SolveStatus,
    iterations: usize,
    kkt_residual: f64,
) -> Result<OcpSolution> {
    let xs = ocp.rollout(&seq);
    if xs.iter().any(|x| !x.is_finite()) || seq.iter().any(|u| !u.iter().all(|v| v.is_finite())) {
        return Err(Error::SolverDivergence { iterations });
    }
    let first_step_descent = super::lyapunov_at(&xs[1], &ocp.references[1], &ocp.model) - ocp.v0();
    Ok(OcpSolution {
        cost: ocp.cost_of(&seq, &xs),
        u_sequence: seq,
        xi_sequence: xs,
        first_step_descent,
        descent_bound: ocp.descent_bound(),
        status,
        iterations,
        kkt_residual,
    })
}

fn fallback(ocp: &Ocp) -> Result<OcpSolution> {
    let state = reconstruct_state(&ocp.xi0, &ocp.references[0]);
    let u = super::fallback_move(
        &state,
        &ocp.references[0],
        &ocp.mode,
        &ocp.model,
        &ocp.limits,
        &ocp.u_prev,
        ocp.config.dt,
        ocp.config.allocation_epsilon,
    )?;
    let seq = ocp.project_sequence(&vec![u; ocp.horizon()]);
    assemble(ocp, seq, SolveStatus::InfeasibleFallback, 0, f64::NAN)
}

/// Solve the horizon problem from a warm start (projected internally onto
/// the input limits).
pub fn solve_ocp(ocp: &Ocp, warm_start: &[ThrustCommand]) -> Result<OcpSolution> {
    let n = ocp.horizon();
    if warm_start.len() != n {
        return Err(Error::InvalidConfig(format!("warm start has {} steps, horizon is {n}", warm_start.len())));
    }
    if !ocp.xi0.is_finite() || warm_start.iter().any(|u| !u.iter().all(|v| v.is_finite())) {
        return Err(Error::SolverDivergence { iterations: 0 });
    }
    let cfg = &ocp.config;
    let merit = Merit {
        terminal_weight: cfg.terminal_weight,
        terminal_level: cfg.terminal_level,
        enforce_terminal: cfg.enforce_terminal,
        enforce_descent: cfg.enforce_descent,
        tightening: cfg.descent_tightening,
    };

    let mut seq = ocp.project_sequence(warm_start);
    let mut target = None;
    if cfg.enforce_descent {
        let u_star = descent_minimizer(ocp)?;
        if ocp.descent_residual(&u_star) + cfg.descent_tightening > 0.0 {
            return fallback(ocp);
        }
        if ocp.descent_residual(&seq[0]) + cfg.descent_tightening > 0.0 {
            seq = repair_first_step(ocp, &seq, &u_star);
        }
        target = Some(u_star);
    }

    let (lo, hi) = ocp.variable_bounds();
    let nv = ocp.free_variables();
    let step = ocp.limits.rate_max * cfg.dt;
    let with_slack = cfg.enforce_terminal;
    let nq = nv + usize::from(with_slack);

    let mut z = ocp.to_free(&seq);
    let mut lambda_descent = 0.0;
    let mut mu: f64 = 1.0;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let lin = linearize(ocp, &z);
        if !lin.cost.is_finite() || lin.grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDivergence { iterations });
        }
        let mut h = DMatrix::zeros(nq, nq);
        h.view_mut((0, 0), (nv, nv)).copy_from(&lin.hess);
        if cfg.enforce_descent && lambda_descent > 0.0 {
            let mut block = h.view_mut((0, 0), (nv, nv));
            block += &lin.descent_hess * lambda_descent;
        }
        let diag_scale = lin.hess.diagonal().max().max(1e-12);
        for i in 0..nv {
            h[(i, i)] += 1e-12 * diag_scale;
        }
        let mut g = DVector::zeros(nq);
        g.rows_mut(0, nv).copy_from(&lin.grad);
        if with_slack {
            h[(nv, nv)] = SLACK_CURVATURE;
            g[nv] = cfg.terminal_weight;
        }

        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(4 * nv + 3);
        let unit = |c: usize, s: f64| {
            let mut r = DVector::zeros(nq);
            r[c] = s;
            r
        };
        for c in 0..nv {
            rows.push((unit(c, 1.0), lo[c] - z[c]));
            rows.push((unit(c, -1.0), z[c] - hi[c]));
            let (k, j) = ocp.free_index(c);
            if k > 0 {
                if let Some(cp) = ocp.column(k - 1, j) {
                    let mut r = unit(c, 1.0);
                    r[cp] = -1.0;
                    let du = z[c] - z[cp];
                    rows.push((r.clone(), -step - du));
                    rows.push((-r, du - step));
                }
            }
        }
        let descent_row = if cfg.enforce_descent {
            let mut r = DVector::zeros(nq);
            r.rows_mut(0, nv).copy_from(&(-&lin.descent_grad));
            rows.push((r, lin.descent + cfg.descent_tightening));
            Some(rows.len() - 1)
        } else {
            None
        };
        if with_slack {
            let mut r = DVector::zeros(nq);
            r.rows_mut(0, nv).copy_from(&(-&lin.terminal_grad));
            r[nv] = 1.0;
            rows.push((r, lin.terminal - cfg.terminal_level));
            rows.push((unit(nv, 1.0), 0.0));
        }
        let m = rows.len();
        let mut a = DMatrix::zeros(m, nq);
        let mut b = DVector::zeros(m);
        for (i, (r, bi)) in rows.into_iter().enumerate() {
            a.set_row(i, &r.transpose());
            b[i] = bi;
        }
        let sol = match solve_qp(&QpProblem { h: h.clone(), g, a, b }, 50 * (nq + m)) {
            Ok(s) => s,
            Err(Error::SolverDivergence { .. }) | Err(Error::QpInfeasible) | Err(Error::NotPositiveDefinite(_)) => break,
            Err(e) => return Err(e),
        };
        let p = sol.x.rows(0, nv).into_owned();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDivergence { iterations });
        }
        if let Some(i) = descent_row {
            lambda_descent = sol.multipliers[i];
        }

        let hp = h.view((0, 0), (nv, nv)) * &p;
        let descent_violation = merit.descent_violation(lin.descent);
        kkt = (hp.amax() / (1.0 + lin.grad.amax())).max(descent_violation / (1.0 + ocp.v0().abs()));
        if kkt < cfg.kkt_tolerance {
            converged = true;
            break;
        }

        mu = mu.max(1.5 * lambda_descent + 1e-6);
        let phi0 = merit.value(ocp, &z, mu);
        let lin_term = |v: f64, dv: f64| merit.terminal_violation(v + dv) - merit.terminal_violation(v);
        let dphi = lin.grad.dot(&p)
            + cfg.terminal_weight * lin_term(lin.terminal, lin.terminal_grad.dot(&p))
            + mu * (merit.descent_violation(lin.descent + lin.descent_grad.dot(&p)) - descent_violation);
        if dphi >= 0.0 {
            // no model decrease left: the step is numerical noise
            converged = kkt < 1e2 * cfg.kkt_tolerance;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &z + &p * t;
            if merit.value(ocp, &trial, mu) <= phi0 + ARMIJO * t * dphi {
                z = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    for c in 0..nv {
        z[c] = z[c].clamp(lo[c], hi[c]);
    }
    let mut seq = ocp.project_sequence(&ocp.to_sequence(&z));
    if let Some(u_star) = target {
        if ocp.descent_residual(&seq[0]) + cfg.descent_tightening > 0.0 {
            seq = repair_first_step(ocp, &seq, &u_star);
        }
    }
    let status = if converged { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    assemble(ocp, seq, status, iterations, kkt)
}
