//! Posterior probabilities over the fault hypotheses.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const PRIOR_FLOOR: f64 = 1e-300;

/// `rho * ell_bar_prev + ell`.
pub fn accumulate_likelihood(ell_bar_prev: f64, ell: f64, rho: f64) -> f64 {
    rho * ell_bar_prev + ell
}

/// Markov prediction of the mode prior, `p~_i = sum_j T_ji p_j`.
pub fn mix_prior(p_prev: &Vector3<f64>, transition: &Matrix3<f64>) -> Vector3<f64> {
    transition.transpose() * p_prev
}

/// Log-sum-exp normalization of `p~_i exp(ell_bar_i)`.
pub fn posterior_update(p_tilde: &Vector3<f64>, ell_bar: &Vector3<f64>) -> Vector3<f64> {
    let log_post = Vector3::from_fn(|i, _| p_tilde[i].max(PRIOR_FLOOR).ln() + ell_bar[i]);
    let m = log_post.max();
    let w = log_post.map(|v| (v - m).exp());
    w / w.sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeBelief {
    pub p: Vector3<f64>,
    pub ell_bar: Vector3<f64>,
    pub rho: f64,
}

impl ModeBelief {
    /// Certain of the healthy mode, no accumulated evidence.
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidConfig(format!("forgetting factor must lie in (0, 1], got {rho}")));
        }
        Ok(Self { p: Vector3::new(1.0, 0.0, 0.0), ell_bar: Vector3::zeros(), rho })
    }

    pub fn update(&mut self, ell: &Vector3<f64>, transition: &Matrix3<f64>) -> Vector3<f64> {
        self.ell_bar = Vector3::from_fn(|i, _| accumulate_likelihood(self.ell_bar[i], ell[i], self.rho));
        let p_tilde = mix_prior(&self.p, transition);
        self.p = posterior_update(&p_tilde, &self.ell_bar);
        self.p
    }

    /// Most probable mode index; ties go to `prefer`, then the lowest index.
    pub fn map_index(&self, prefer: Option<usize>) -> usize {
        map_index(&self.p, prefer)
    }
}

/// Argmax with ties broken toward `prefer`, else toward the lowest index.
pub fn map_index(p: &Vector3<f64>, prefer: Option<usize>) -> usize {
    let best = p.max();
    if let Some(k) = prefer {
        if p[k] == best {
            return k;
        }
    }
    (0..3).find(|&i| p[i] == best).unwrap_or(0)
}
