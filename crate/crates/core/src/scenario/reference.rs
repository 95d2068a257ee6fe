//! Reference trajectories for the two test cases.
//!
//! Heading follows the path tangent, `psi_d = atan2(y_d', x_d')`, with
//! derivatives obtained analytically from the position derivatives.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::backstepping::ReferenceSignal;
use crate::math::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    /// `x_d = 0.5 t`, `y_d = sin(0.5 t)`.
    #[serde(rename = "1")]
    One,
    /// `x_d = -sin(0.5 t)`, `y_d = sin(0.25 t)`.
    #[serde(rename = "2")]
    Two,
}

impl CaseId {
    pub fn number(&self) -> u8 {
        match self {
            CaseId::One => 1,
            CaseId::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(CaseId::One),
            2 => Some(CaseId::Two),
            _ => None,
        }
    }
}

/// Position and its first three derivatives for one planar axis pair.
fn planar(t: f64, case: CaseId) -> [[f64; 2]; 4] {
    match case {
        CaseId::One => {
            let (s, c) = (0.5 * t).sin_cos();
            [[0.5 * t, s], [0.5, 0.5 * c], [0.0, -0.25 * s], [0.0, -0.125 * c]]
        }
        CaseId::Two => {
            let (sx, cx) = (0.5 * t).sin_cos();
            let (sy, cy) = (0.25 * t).sin_cos();
            [[-sx, sy], [-0.5 * cx, 0.25 * cy], [0.25 * sx, -0.0625 * sy], [0.125 * cx, -0.015625 * cy]]
        }
    }
}

/// Reference at time `t` with the heading in `(-pi, pi]`.
pub fn reference(t: f64, case: CaseId) -> ReferenceSignal {
    let [p, v, a, j] = planar(t, case);
    let speed2 = v[0] * v[0] + v[1] * v[1];
    let psi = v[1].atan2(v[0]);
    let num = v[0] * a[1] - v[1] * a[0];
    let num_dot = v[0] * j[1] - v[1] * j[0];
    let den_dot = 2.0 * (v[0] * a[0] + v[1] * a[1]);
    let r = num / speed2;
    let r_dot = (num_dot * speed2 - num * den_dot) / (speed2 * speed2);
    ReferenceSignal {
        eta_d: Vector3::new(p[0], p[1], psi),
        eta_d_dot: Vector3::new(v[0], v[1], r),
        eta_d_ddot: Vector3::new(a[0], a[1], r_dot),
    }
}

/// Reference whose heading is unwrapped to lie within `pi` of `anchor`.
pub fn reference_near(t: f64, case: CaseId, anchor: f64) -> ReferenceSignal {
    let mut r = reference(t, case);
    r.eta_d[2] = anchor + wrap_angle(r.eta_d[2] - anchor);
    r
}

/// References at `t0 + k dt`, `k = 0..=n`, with a continuous heading that
/// starts within `pi` of `anchor`.
pub fn reference_horizon(case: CaseId, t0: f64, dt: f64, n: usize, anchor: f64) -> Vec<ReferenceSignal> {
    let mut out = Vec::with_capacity(n + 1);
    let mut prev = anchor;
    for k in 0..=n {
        let r = reference_near(t0 + k as f64 * dt, case, prev);
        prev = r.eta_d[2];
        out.push(r);
    }
    out
}

/// Heading unwrapping helper for a sampled reference stream.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeadingUnwrap {
    last: Option<f64>,
}

impl HeadingUnwrap {
    pub fn next(&mut self, psi: f64) -> f64 {
        let out = match self.last {
            None => psi,
            Some(prev) => prev + wrap_angle(psi - prev),
        };
        self.last = Some(out);
        out
    }
}
