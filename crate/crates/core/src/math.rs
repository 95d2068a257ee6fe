//! Small numeric helpers shared across modules.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SMatrix};

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Yaw-rate generator `S(r)` with `dJ/dt = J(psi) S(r)`.
pub fn yaw_skew(r: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, -r, 0.0, r, 0.0, 0.0, 0.0, 0.0, 0.0)
}

/// Largest absolute entry.
pub fn max_abs<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric and positive definite, judged by a successful Cholesky of the
/// matrix after checking symmetry to `tol`.
pub fn is_spd<const N: usize>(m: &SMatrix<f64, N, N>, tol: f64) -> bool {
    if max_abs(&(m - m.transpose())) > tol {
        return false;
    }
    m.cholesky().is_some()
}

/// Positive semidefinite check through the symmetric eigenvalues.
pub fn is_psd<const N: usize>(m: &SMatrix<f64, N, N>, tol: f64) -> bool
where
    nalgebra::Const<N>: nalgebra::DimMin<nalgebra::Const<N>, Output = nalgebra::Const<N>>,
    nalgebra::Const<N>: nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<
        <nalgebra::Const<N> as nalgebra::DimSub<nalgebra::U1>>::Output,
    >,
{
    if max_abs(&(m - m.transpose())) > tol {
        return false;
    }
    m.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_maps_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3 + 4.0 * PI) - 0.3).abs() < 1e-12);
        for k in -50..50 {
            let w = wrap_angle(k as f64 * 0.37);
            assert!(w > -PI && w <= PI);
        }
    }
}
