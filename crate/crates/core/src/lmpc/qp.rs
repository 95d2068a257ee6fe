//! Dense strictly convex QP solver (Goldfarb-Idnani dual active set).
//!
//! Solves `min 1/2 x^T H x + g^T x` subject to `A x >= b` row-wise.
//! The factorization of the active constraints is rebuilt from scratch on
//! every change of the active set, which keeps the code short and is cheap
//! at the sizes used by the horizon problems (tens of variables).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Constraint rows, `a.row(i) * x >= b[i]`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One non-negative multiplier per constraint row (zero when inactive).
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

struct ActiveFactor {
    j1: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn factor_active(j0t: &DMatrix<f64>, a: &DMatrix<f64>, active: &[usize]) -> Option<ActiveFactor> {
    let n = j0t.nrows();
    if active.is_empty() {
        return Some(ActiveFactor { j1: DMatrix::zeros(n, 0), r: DMatrix::zeros(0, 0) });
    }
    let mut na = DMatrix::zeros(n, active.len());
    for (c, &i) in active.iter().enumerate() {
        na.set_column(c, &a.row(i).transpose());
    }
    let qr = (j0t * na).qr();
    let q = qr.q();
    let r = qr.r();
    // J1 = J0 Q1 with J0 = (J0^T)^T
    let j1 = j0t.transpose() * q;
    Some(ActiveFactor { j1, r })
}

/// Solve the QP. Fails with [`Error::NotPositiveDefinite`] when `H` has no
/// Cholesky factor and with [`Error::QpInfeasible`] when the constraints
/// admit no point.
pub fn solve_qp(problem: &QpProblem, max_iterations: usize) -> Result<QpSolution> {
    let n = problem.h.nrows();
    let m = problem.a.nrows();
    if problem.h.ncols() != n || problem.g.len() != n || problem.a.ncols() != n || problem.b.len() != m {
        return Err(Error::InvalidConfig("QP dimensions are inconsistent".into()));
    }
    if problem.h.iter().chain(problem.g.iter()).chain(problem.a.iter()).chain(problem.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SolverDivergence { iterations: 0 });
    }
    let hs = (&problem.h + problem.h.transpose()) * 0.5;
    let chol = hs.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("QP Hessian".into()))?;
    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::NotPositiveDefinite("QP Hessian".into()))?;
    // J0 = L^-T, so J0 J0^T = H^-1; store J0^T = L^-1.
    let j0t = linv;
    let hinv = j0t.transpose() * &j0t;

    let row_norm: Vec<f64> = (0..m).map(|i| problem.a.row(i).norm().max(1e-300)).collect();
    let mut x = -(&hinv * &problem.g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    let slack = |x: &DVector<f64>, i: usize| problem.a.row(i).dot(&x.transpose()) - problem.b[i];

    loop {
        // most violated inactive constraint, measured in distance units
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&x, i) / row_norm[i];
            let tol = 1e-11 * (1.0 + problem.b[i].abs() / row_norm[i]);
            if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((p, _)) = worst else { break };
        let np = problem.a.row(p).transpose();
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::SolverDivergence { iterations });
            }
            let f = factor_active(&j0t, &problem.a, &active).ok_or(Error::QpInfeasible)?;
            let d1 = f.j1.transpose() * &np;
            let z = &hinv * &np - &f.j1 * &d1;
            let r = if active.is_empty() {
                DVector::zeros(0)
            } else {
                f.r.solve_upper_triangular(&d1).unwrap_or_else(|| DVector::zeros(active.len()))
            };

            // partial step limited by multipliers that would turn negative
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_idx = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let z_small = z.norm() <= 1e-13 * np.norm() * hinv.norm().max(1.0);
            let t2 = if z_small || zn <= 0.0 { f64::INFINITY } else { -slack(&x, p) / zn };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::QpInfeasible);
            }
            if t2.is_infinite() {
                for (k, rk) in r.iter().enumerate() {
                    u[k] -= t * rk;
                }
                u_plus += t;
                let k = drop_idx.expect("finite t1 has an index");
                active.remove(k);
                u.remove(k);
                continue;
            }
            x += &z * t;
            for (k, rk) in r.iter().enumerate() {
                u[k] -= t * rk;
            }
            u_plus += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_plus);
                break;
            }
            let k = drop_idx.expect("partial step has an index");
            active.remove(k);
            u.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = u[k].max(0.0);
    }
    Ok(QpSolution { x, multipliers, active, iterations })
}
