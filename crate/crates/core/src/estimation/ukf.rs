//! Scaled unscented Kalman filter with an identity measurement map.

use nalgebra::{Matrix6, SMatrix, Vector6};

use crate::error::{Error, Result};
use crate::math::wrap_angle;

/// Index of the heading inside the 6-state; its innovation is wrapped.
const HEADING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Added to the innovation covariance diagonal.
    pub jitter: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 2.0, kappa: 0.0, jitter: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    pub q: Matrix6<f64>,
    pub r: Matrix6<f64>,
}

impl UkfState {
    pub fn new(mean: Vector6<f64>, covariance: Matrix6<f64>, q: Matrix6<f64>, r: Matrix6<f64>) -> Result<Self> {
        if covariance.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("initial filter covariance".into()));
        }
        if r.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("measurement noise".into()));
        }
        Ok(Self { mean, covariance, q, r })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfUpdate {
    pub state: UkfState,
    pub innovation: Vector6<f64>,
    pub s: Matrix6<f64>,
}

/// Mean and covariance weights `(wm, wc)` for `2n + 1` sigma points.
pub fn sigma_weights(params: &UkfParams) -> ([f64; 13], [f64; 13], f64) {
    let n = 6.0;
    let lambda = params.alpha * params.alpha * (n + params.kappa) - n;
    let mut wm = [0.5 / (n + lambda); 13];
    let mut wc = wm;
    wm[0] = lambda / (n + lambda);
    wc[0] = wm[0] + 1.0 - params.alpha * params.alpha + params.beta;
    (wm, wc, n + lambda)
}

fn symmetrize(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor after symmetrization, retrying with growing jitter.
fn robust_cholesky(m: &Matrix6<f64>, base_jitter: f64, what: &str) -> Result<Matrix6<f64>> {
    let sym = symmetrize(m);
    if let Some(c) = sym.cholesky() {
        return Ok(c.l());
    }
    let scale = sym.diagonal().amax().max(1e-300);
    let mut j = base_jitter.max(1e-12) * scale;
    for _ in 0..8 {
        if let Some(c) = (sym + Matrix6::identity() * j).cholesky() {
            return Ok(c.l());
        }
        j *= 10.0;
    }
    Err(Error::FilterDivergence(format!("{what} lost positive definiteness")))
}

/// One predict/update cycle. `process` maps a state through one period.
pub fn ukf_step<F>(ukf: &UkfState, measurement: &Vector6<f64>, params: &UkfParams, process: F) -> Result<UkfUpdate>
where
    F: Fn(&Vector6<f64>) -> Vector6<f64>,
{
    let (wm, wc, spread) = sigma_weights(params);
    let l = robust_cholesky(&(ukf.covariance * spread), params.jitter, "state covariance")?;
    let mut sigma = SMatrix::<f64, 6, 13>::zeros();
    sigma.set_column(0, &process(&ukf.mean));
    for i in 0..6 {
        sigma.set_column(1 + i, &process(&(ukf.mean + l.column(i))));
        sigma.set_column(7 + i, &process(&(ukf.mean - l.column(i))));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterDivergence("sigma point propagation produced non-finite values".into()));
    }
    let mut mean = Vector6::zeros();
    for (i, w) in wm.iter().enumerate() {
        mean += sigma.column(i) * *w;
    }
    let mut p_pred = ukf.q;
    for (i, w) in wc.iter().enumerate() {
        let d = sigma.column(i) - mean;
        p_pred += d * d.transpose() * *w;
    }
    let p_pred = symmetrize(&p_pred);

    let mut innovation = measurement - mean;
    innovation[HEADING] = wrap_angle(innovation[HEADING]);
    let s = symmetrize(&(p_pred + ukf.r + Matrix6::identity() * params.jitter));
    let s_chol = s
        .cholesky()
        .ok_or_else(|| Error::FilterDivergence("innovation covariance is not positive definite".into()))?;
    // K = P S^-1 (P symmetric)
    let gain = s_chol.solve(&p_pred).transpose();
    let new_mean = mean + gain * innovation;
    let new_cov = symmetrize(&(p_pred - gain * s * gain.transpose()));
    robust_cholesky(&new_cov, params.jitter, "posterior covariance")?;
    Ok(UkfUpdate {
        state: UkfState { mean: new_mean, covariance: new_cov, q: ukf.q, r: ukf.r },
        innovation,
        s,
    })
}

/// Gaussian log-likelihood of an innovation, `-1/2 (e^T S^-1 e + log det S + 6 log 2 pi)`.
pub fn log_likelihood(e: &Vector6<f64>, s: &Matrix6<f64>) -> Result<f64> {
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))?;
    let maha = e.dot(&chol.solve(e));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (maha + log_det + 6.0 * (2.0 * std::f64::consts::PI).ln()))
}

/// Normalized innovation squared `e^T S^-1 e`.
pub fn normalized_innovation(e: &Vector6<f64>, s: &Matrix6<f64>) -> Result<f64> {
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))?;
    Ok(e.dot(&chol.solve(e)))
}
