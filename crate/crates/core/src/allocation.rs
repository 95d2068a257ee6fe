//! Thruster geometry, fault parameterization and force allocation.
//!
//! Four horizontal thrusters map commands `u` (N) to the generalized force
//! through `tau = T(theta) Gamma u`. A misaligned thruster has its force
//! direction rotated in the horizontal plane, and its moment arm entry is
//! recomputed from the mounting position.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ThrustCommand = Vector4<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ThrusterLayout {
    pub positions: [Vector2<f64>; 4],
    /// Unit force directions in the body frame.
    pub directions: [Vector2<f64>; 4],
}

impl ThrusterLayout {
    pub fn new(positions: [Vector2<f64>; 4], directions: [Vector2<f64>; 4]) -> Result<Self> {
        for d in &directions {
            if (d.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel("thruster directions must be unit vectors".into()));
            }
        }
        let layout = Self { positions, directions };
        let t = layout.nominal();
        if (t * t.transpose()).determinant().abs() < 1e-9 {
            return Err(Error::InvalidModel("thruster layout does not actuate surge, sway and yaw".into()));
        }
        Ok(layout)
    }

    /// Vectored X layout at `(+-0.35, +-0.25)` m, thrust axes at 45 deg to surge.
    pub fn vectored_x() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::new(
            [
                Vector2::new(0.35, 0.25),
                Vector2::new(0.35, -0.25),
                Vector2::new(-0.35, 0.25),
                Vector2::new(-0.35, -0.25),
            ],
            [
                Vector2::new(h, -h),
                Vector2::new(h, h),
                Vector2::new(h, h),
                Vector2::new(h, -h),
            ],
        )
        .expect("built-in layout is valid")
    }

    pub fn nominal(&self) -> Matrix3x4<f64> {
        allocation_matrix(self, &Vector4::zeros())
    }
}

impl Default for ThrusterLayout {
    fn default() -> Self {
        Self::vectored_x()
    }
}

/// Per-thruster effectiveness `gamma` and misalignment `theta` (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultParameters {
    pub gamma: Vector4<f64>,
    pub theta: Vector4<f64>,
}

impl FaultParameters {
    pub fn new(gamma: Vector4<f64>, theta: Vector4<f64>) -> Result<Self> {
        if gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidConfig("thruster effectiveness must lie in [0, 1]".into()));
        }
        if theta.iter().any(|t| !(t.abs() <= std::f64::consts::PI)) {
            return Err(Error::InvalidConfig("misalignment must lie in [-pi, pi]".into()));
        }
        Ok(Self { gamma, theta })
    }

    pub fn nominal() -> Self {
        Self { gamma: Vector4::repeat(1.0), theta: Vector4::zeros() }
    }

    /// Thruster `index` (0-based) blocked.
    pub fn blocked(index: usize) -> Self {
        let mut f = Self::nominal();
        f.gamma[index] = 0.0;
        f
    }

    /// Thruster `index` derated to `gamma` and rotated by `theta` rad.
    pub fn derated(index: usize, gamma: f64, theta: f64) -> Self {
        let mut f = Self::nominal();
        f.gamma[index] = gamma;
        f.theta[index] = theta;
        f
    }

    pub fn is_blocked(&self, index: usize) -> bool {
        self.gamma[index] == 0.0
    }

    /// Effective map `T(theta) Gamma`.
    pub fn effective_matrix(&self, layout: &ThrusterLayout) -> Matrix3x4<f64> {
        scale_columns(&allocation_matrix(layout, &self.theta), &self.gamma)
    }
}

fn scale_columns(t: &Matrix3x4<f64>, gamma: &Vector4<f64>) -> Matrix3x4<f64> {
    let mut out = *t;
    for (i, mut col) in out.column_iter_mut().enumerate() {
        col *= gamma[i];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLimits {
    pub u_min: Vector4<f64>,
    pub u_max: Vector4<f64>,
    /// Maximum command rate, N/s.
    pub rate_max: f64,
}

impl InputLimits {
    pub fn new(u_min: Vector4<f64>, u_max: Vector4<f64>, rate_max: f64) -> Result<Self> {
        if u_min.iter().zip(u_max.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidConfig("u_min must be below u_max".into()));
        }
        if !(rate_max > 0.0) {
            return Err(Error::InvalidConfig("rate limit must be positive".into()));
        }
        Ok(Self { u_min, u_max, rate_max })
    }

    /// Admissible interval for the next command given the previous one.
    pub fn step_bounds(&self, u_prev: &ThrustCommand, dt: f64) -> (ThrustCommand, ThrustCommand) {
        let step = self.rate_max * dt;
        let prev = u_prev.zip_zip_map(&self.u_min, &self.u_max, |p, lo, hi| p.clamp(lo, hi));
        let lo = (prev - ThrustCommand::repeat(step)).sup(&self.u_min);
        let hi = (prev + ThrustCommand::repeat(step)).inf(&self.u_max);
        (lo, hi)
    }
}

impl Default for InputLimits {
    fn default() -> Self {
        Self { u_min: Vector4::repeat(-500.0), u_max: Vector4::repeat(500.0), rate_max: 2000.0 }
    }
}

/// Allocation matrix with each column's force direction rotated by
/// `theta[i]` and the yaw-moment row recomputed as `r_i x R(theta_i) d_i`.
pub fn allocation_matrix(layout: &ThrusterLayout, theta: &Vector4<f64>) -> Matrix3x4<f64> {
    let mut t = Matrix3x4::zeros();
    for i in 0..4 {
        let (s, c) = theta[i].sin_cos();
        let d = layout.directions[i];
        let f = Vector2::new(c * d.x - s * d.y, s * d.x + c * d.y);
        let p = layout.positions[i];
        t.set_column(i, &Vector3::new(f.x, f.y, p.x * f.y - p.y * f.x));
    }
    t
}

pub fn generalized_force(u: &ThrustCommand, fault: &FaultParameters, layout: &ThrusterLayout) -> Vector3<f64> {
    allocation_matrix(layout, &fault.theta) * u.component_mul(&fault.gamma)
}

/// Damped least-squares allocation `A^T (A A^T + eps I)^-1 tau` with
/// `A = T(theta) Gamma`. Blocked thrusters get exactly zero.
pub fn allocate_damped(
    tau: &Vector3<f64>,
    fault: &FaultParameters,
    layout: &ThrusterLayout,
    epsilon: f64,
) -> Result<ThrustCommand> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig("damping factor must be non-negative".into()));
    }
    let a = scale_columns(&allocation_matrix(layout, &fault.theta), &fault.gamma);
    let normal: Matrix3<f64> = a * a.transpose() + Matrix3::identity() * epsilon;
    if epsilon == 0.0 {
        let eig = normal.symmetric_eigenvalues();
        if eig.min() <= 1e-12 * eig.max().max(1.0) {
            return Err(Error::RankDeficient);
        }
    }
    let chol = normal.cholesky().ok_or(Error::RankDeficient)?;
    let mut u = a.transpose() * chol.solve(tau);
    for i in 0..4 {
        if fault.is_blocked(i) {
            u[i] = 0.0;
        }
    }
    Ok(u)
}

/// Componentwise projection onto the amplitude box intersected with the
/// rate box around `u_prev`.
pub fn project_input(u_raw: &ThrustCommand, u_prev: &ThrustCommand, limits: &InputLimits, dt: f64) -> ThrustCommand {
    let (lo, hi) = limits.step_bounds(u_prev, dt);
    u_raw.zip_zip_map(&lo, &hi, |u, l, h| u.clamp(l, h))
}
