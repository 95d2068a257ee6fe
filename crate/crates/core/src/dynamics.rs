//! Planar surge/sway/yaw vehicle model.
//!
//! ```text
//! eta_dot = J(psi) nu
//! M nu_dot + C(nu) nu + D(nu) nu = tau + w
//! ```
//!
//! with `eta = [x, y, psi]` in the Earth-fixed frame and `nu = [u, v, r]` in
//! the body frame. `C` is built from the momentum `M nu` so it is
//! skew-symmetric for any velocity, and `D = D_lin + diag(D_quad |nu|)`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::math;

const DEFAULT_HYDRO: &str = include_str!("../params/hydro_default.toml");
const HYDRO_SCHEMA: &str = "almpc-hydro";
const HYDRO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// `[x, y, psi]`, heading kept unwrapped.
    pub eta: Vector3<f64>,
    /// `[u, v, r]`.
    pub nu: Vector3<f64>,
}

impl VehicleState {
    pub fn new(eta: Vector3<f64>, nu: Vector3<f64>) -> Self {
        Self { eta, nu }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self::new(x.fixed_rows::<3>(0).into_owned(), x.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.eta);
        x.fixed_rows_mut::<3>(3).copy_from(&self.nu);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }

    /// Heading mapped to `(-pi, pi]`.
    pub fn wrapped_heading(&self) -> f64 {
        math::wrap_angle(self.eta[2])
    }
}

/// Inertia and damping parameters of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroModel {
    pub name: String,
    m: Matrix3<f64>,
    m_inv: Matrix3<f64>,
    d_lin: Matrix3<f64>,
    d_quad: Vector3<f64>,
    /// Operating box `(u_max, v_max, r_max)` on which the damping bound holds.
    pub operating_box: Vector3<f64>,
}

#[derive(Debug, Deserialize)]
struct HydroFile {
    schema: String,
    version: u32,
    #[serde(default)]
    name: Option<String>,
    inertia: InertiaSection,
    damping: DampingSection,
    operating_box: BoxSection,
}

#[derive(Debug, Deserialize)]
struct InertiaSection {
    matrix: [[f64; 3]; 3],
}

#[derive(Debug, Deserialize)]
struct DampingSection {
    linear: [[f64; 3]; 3],
    quadratic: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct BoxSection {
    u_max: f64,
    v_max: f64,
    r_max: f64,
}

fn rows_to_matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

impl HydroModel {
    pub fn new(
        m: Matrix3<f64>,
        d_lin: Matrix3<f64>,
        d_quad: Vector3<f64>,
        operating_box: Vector3<f64>,
    ) -> Result<Self> {
        if m.iter().chain(d_lin.iter()).chain(d_quad.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite coefficient".into()));
        }
        if !math::is_spd(&m, 1e-9) {
            return Err(Error::InvalidModel(
                "inertia matrix must be symmetric positive definite".into(),
            ));
        }
        let sym = 0.5 * (d_lin + d_lin.transpose());
        if sym.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidModel("linear damping must be positive definite".into()));
        }
        if d_quad.iter().any(|&q| q < 0.0) {
            return Err(Error::InvalidModel("quadratic damping must be non-negative".into()));
        }
        if operating_box.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::InvalidModel("operating box bounds must be positive".into()));
        }
        let m_inv = m.cholesky().expect("checked SPD").inverse();
        Ok(Self {
            name: String::from("custom"),
            m,
            m_inv,
            d_lin,
            d_quad,
            operating_box,
        })
    }

    /// Parses the versioned TOML parameter file format.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: HydroFile = toml::from_str(text)?;
        if file.schema != HYDRO_SCHEMA {
            return Err(Error::InvalidModel(format!(
                "unexpected schema '{}', expected '{HYDRO_SCHEMA}'",
                file.schema
            )));
        }
        if file.version != HYDRO_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported parameter file version {}",
                file.version
            )));
        }
        let mut model = Self::new(
            rows_to_matrix(&file.inertia.matrix),
            rows_to_matrix(&file.damping.linear),
            Vector3::from(file.damping.quadratic),
            Vector3::new(
                file.operating_box.u_max,
                file.operating_box.v_max,
                file.operating_box.r_max,
            ),
        )?;
        if let Some(name) = file.name {
            model.name = name;
        }
        Ok(model)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.m_inv
    }

    pub fn linear_damping(&self) -> &Matrix3<f64> {
        &self.d_lin
    }

    pub fn quadratic_damping(&self) -> &Vector3<f64> {
        &self.d_quad
    }

    /// Uniform lower bound `d_min` with `D(nu) >= d_min I` for every `nu`.
    /// The quadratic part only adds a non-negative diagonal, so the bound is
    /// the smallest eigenvalue of the symmetric part of `D_lin`.
    pub fn d_min(&self) -> f64 {
        (0.5 * (self.d_lin + self.d_lin.transpose())).symmetric_eigenvalues().min()
    }

    pub fn kinetic_energy(&self, nu: &Vector3<f64>) -> f64 {
        0.5 * nu.dot(&(self.m * nu))
    }
}

impl Default for HydroModel {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_HYDRO).expect("bundled parameter file is valid")
    }
}

/// Bounded generalized-force disturbance, zero unless enabled.
#[derive(Debug, Clone)]
pub struct Disturbance {
    bound: Vector3<f64>,
    rng: Option<ChaCha8Rng>,
}

impl Disturbance {
    pub fn none() -> Self {
        Self { bound: Vector3::zeros(), rng: None }
    }

    /// Uniform noise in `[-bound, bound]` per axis, reproducible from `seed`.
    pub fn uniform(bound: Vector3<f64>, seed: u64) -> Self {
        Self { bound: bound.abs(), rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn bound(&self) -> &Vector3<f64> {
        &self.bound
    }

    pub fn sample(&mut self) -> Vector3<f64> {
        match self.rng.as_mut() {
            None => Vector3::zeros(),
            Some(rng) => {
                let b = self.bound;
                Vector3::from_fn(|i, _| if b[i] > 0.0 { rng.random_range(-b[i]..=b[i]) } else { 0.0 })
            }
        }
    }
}

/// Kinematic transform `J(psi)`.
pub fn rotation(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Coriolis-centripetal matrix assembled from the momentum `p = M nu`.
pub fn coriolis(hydro: &HydroModel, nu: &Vector3<f64>) -> Matrix3<f64> {
    let p = hydro.inertia() * nu;
    Matrix3::new(0.0, 0.0, -p[1], 0.0, 0.0, p[0], p[1], -p[0], 0.0)
}

pub fn damping(hydro: &HydroModel, nu: &Vector3<f64>) -> Matrix3<f64> {
    hydro.linear_damping() + Matrix3::from_diagonal(&hydro.quadratic_damping().component_mul(&nu.abs()))
}

/// Time derivative of `[eta; nu]` under generalized force `tau` and
/// disturbance `w`.
pub fn state_derivative(
    hydro: &HydroModel,
    state: &VehicleState,
    tau: &Vector3<f64>,
    w: &Vector3<f64>,
) -> Vector6<f64> {
    let nu = &state.nu;
    let eta_dot = rotation(state.eta[2]) * nu;
    let nu_dot = hydro.inertia_inv() * (tau + w - coriolis(hydro, nu) * nu - damping(hydro, nu) * nu);
    let mut dx = Vector6::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&eta_dot);
    dx.fixed_rows_mut::<3>(3).copy_from(&nu_dot);
    dx
}

/// One classical Runge-Kutta step of the plant with `tau` and `w` held.
pub fn integrate_plant(
    hydro: &HydroModel,
    state: &VehicleState,
    tau: &Vector3<f64>,
    w: &Vector3<f64>,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("integration step must be positive, got {dt}")));
    }
    let x = state.to_vector();
    let f = |x: &Vector6<f64>| state_derivative(hydro, &VehicleState::from_vector(x), tau, w);
    let k1 = f(&x);
    let k2 = f(&(x + 0.5 * dt * k1));
    let k3 = f(&(x + 0.5 * dt * k2));
    let k4 = f(&(x + dt * k3));
    let next = VehicleState::from_vector(&(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)));
    if !next.is_finite() {
        return Err(Error::IntegrationBlowup { t: f64::NAN });
    }
    Ok(next)
}

/// One Runge-Kutta step with the force re-evaluated at every stage, for
/// continuous-time feedback laws `tau = law(t, state)`.
pub fn integrate_feedback<F>(hydro: &HydroModel, state: &VehicleState, t: f64, dt: f64, law: F) -> Result<VehicleState>
where
    F: Fn(f64, &VehicleState) -> Vector3<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("integration step must be positive, got {dt}")));
    }
    let w = Vector3::zeros();
    let f = |tt: f64, x: &Vector6<f64>| {
        let s = VehicleState::from_vector(x);
        state_derivative(hydro, &s, &law(tt, &s), &w)
    };
    let x = state.to_vector();
    let k1 = f(t, &x);
    let k2 = f(t + 0.5 * dt, &(x + 0.5 * dt * k1));
    let k3 = f(t + 0.5 * dt, &(x + 0.5 * dt * k2));
    let k4 = f(t + dt, &(x + dt * k3));
    let next = VehicleState::from_vector(&(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)));
    if !next.is_finite() {
        return Err(Error::IntegrationBlowup { t: t + dt });
    }
    Ok(next)
}
