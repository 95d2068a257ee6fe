//! The unscented filter against a textbook Kalman filter on the plant
//! linearized about a cruising point, plus posterior recursion limits.

use almpc::allocation::{FaultParameters, ThrustCommand};
use almpc::estimation::{
    default_measurement_noise, default_process_noise, log_likelihood, ukf_step, ModeBelief, ModeLibrary, PlantProcess,
    UkfParams, UkfState,
};
use nalgebra::{Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Forward-difference Jacobian of the one-period plant map.
fn linearize(process: &PlantProcess, x0: &Vector6<f64>, u: &ThrustCommand) -> (Matrix6<f64>, Vector6<f64>) {
    let mode = FaultParameters::nominal();
    let f0 = process.propagate(x0, u, &mode);
    let mut a = Matrix6::zeros();
    for j in 0..6 {
        let mut xp = *x0;
        let mut xm = *x0;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        let col = (process.propagate(&xp, u, &mode) - process.propagate(&xm, u, &mode)) / 2e-6;
        a.set_column(j, &col);
    }
    (a, f0 - a * x0)
}

struct Kalman {
    x: Vector6<f64>,
    p: Matrix6<f64>,
}

impl Kalman {
    fn step(&mut self, a: &Matrix6<f64>, b: &Vector6<f64>, q: &Matrix6<f64>, r: &Matrix6<f64>, y: &Vector6<f64>) -> (Vector6<f64>, Matrix6<f64>) {
        let x_pred = a * self.x + b;
        let p_pred = a * self.p * a.transpose() + q;
        let s = p_pred + r;
        let s_inv = s.try_inverse().unwrap();
        let k = p_pred * s_inv;
        let e = y - x_pred;
        self.x = x_pred + k * e;
        let i_k = Matrix6::identity() - k;
        // Joseph form
        self.p = i_k * p_pred * i_k.transpose() + k * r * k.transpose();
        (e, s)
    }
}

#[test]
fn ukf_matches_kalman_filter_on_linearized_plant() {
    let process = PlantProcess { hydro: Default::default(), layout: Default::default(), dt: 0.1, substeps: 10 };
    let u = ThrustCommand::new(60.0, 40.0, 60.0, 40.0);
    let x0 = Vector6::new(1.0, -0.5, 0.2, 0.4, 0.05, 0.02);
    let (a, b) = linearize(&process, &x0, &u);
    let q = default_process_noise();
    let r = default_measurement_noise();
    let params = UkfParams { jitter: 0.0, ..UkfParams::default() };

    let mut ukf = UkfState::new(x0, r, q, r).unwrap();
    let mut kf = Kalman { x: x0, p: r };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut truth = x0;
    for _ in 0..60 {
        truth = a * truth + b;
        let y = truth + 0.05 * Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let upd = ukf_step(&ukf, &y, &params, |x| a * x + b).unwrap();
        let (e, s) = kf.step(&a, &b, &q, &r, &y);
        assert!((upd.innovation - e).amax() < 1e-6);
        assert!((upd.s - s).amax() < 1e-6);
        assert!((upd.state.mean - kf.x).amax() < 1e-6);
        assert!((upd.state.covariance - kf.p).amax() < 1e-6);
        let ll = log_likelihood(&upd.innovation, &upd.s).unwrap();
        let oracle = -0.5 * (e.dot(&(s.try_inverse().unwrap() * e)) + s.determinant().ln() + 6.0 * (2.0 * std::f64::consts::PI).ln());
        assert!((ll - oracle).abs() < 1e-6);
        ukf = upd.state;
    }
}

#[test]
fn ukf_tracks_nonlinear_plant_near_linearization() {
    // small perturbations: the nonlinear filter stays close to the linear one
    let process = PlantProcess { hydro: Default::default(), layout: Default::default(), dt: 0.1, substeps: 10 };
    let u = ThrustCommand::zeros();
    let x0 = Vector6::zeros();
    let (a, b) = linearize(&process, &x0, &u);
    let q = default_process_noise() * 1e-6;
    let r = default_measurement_noise() * 1e-6;
    let params = UkfParams { jitter: 0.0, ..UkfParams::default() };
    let mut ukf = UkfState::new(x0, r, q, r).unwrap();
    let mut kf = Kalman { x: x0, p: r };
    let y = Vector6::new(1e-4, -1e-4, 1e-4, 1e-4, 0.0, -1e-4);
    for _ in 0..20 {
        let mode = FaultParameters::nominal();
        let upd = ukf_step(&ukf, &y, &params, |x| process.propagate(x, &u, &mode)).unwrap();
        kf.step(&a, &b, &q, &r, &y);
        assert!((upd.state.mean - kf.x).amax() < 1e-6);
        ukf = upd.state;
    }
}

#[test]
fn equal_evidence_relaxes_to_uniform() {
    let t = *ModeLibrary::default().transition();
    let mut belief = ModeBelief::new(0.9995).unwrap();
    for _ in 0..5000 {
        let p = belief.update(&Vector3::repeat(-3.7), &t);
        assert!((p.sum() - 1.0).abs() <= 1e-12);
    }
    assert!((belief.p - Vector3::repeat(1.0 / 3.0)).amax() <= 1e-3);
}

#[test]
fn extreme_evidence_stays_finite() {
    let t = *ModeLibrary::default().transition();
    let mut belief = ModeBelief::new(1.0).unwrap();
    for _ in 0..100 {
        let p = belief.update(&Vector3::new(-1e4, -2e4, -1e4 - 3.0), &t);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.sum() - 1.0).abs() <= 1e-12);
    }
    assert!(belief.ell_bar.min() <= -1e6);
}
