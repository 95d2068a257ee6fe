//! UKF bank and Bayesian mode posterior under a persistent thrust pattern.
//! Thruster 1 is blocked at 5 s; the posterior migrates to mode II.

use almpc::allocation::{generalized_force, ThrustCommand};
use almpc::dynamics::{integrate_plant, HydroModel, VehicleState};
use almpc::estimation::{
    default_measurement_noise, default_process_noise, FilterBank, ModeId, ModeLibrary, PlantProcess, UkfParams,
};
use nalgebra::{Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> almpc::Result<()> {
    let library = ModeLibrary::default();
    let process = PlantProcess { hydro: HydroModel::default(), layout: Default::default(), dt: 0.1, substeps: 10 };
    let r = default_measurement_noise();
    let mut bank = FilterBank::new(library.clone(), process.clone(), UkfParams::default(), default_process_noise(), r, 0.9995)?;
    let chol = r.cholesky().expect("measurement noise is positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = VehicleState::zero();
    let mut u_prev = ThrustCommand::zeros();
    for k in 0..=150 {
        let t = k as f64 * 0.1;
        let y = state.to_vector() + chol * Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
        if k == 0 {
            bank.initialize(&y)?;
        } else {
            let out = bank.step(&u_prev, &y)?;
            if k % 10 == 0 {
                println!("t = {t:4.1} s  p = [{:.3} {:.3} {:.3}]", out.posterior[0], out.posterior[1], out.posterior[2]);
            }
        }
        let phase = 0.8 * t;
        let u = ThrustCommand::new(150.0 * phase.sin(), 60.0, 150.0 * phase.cos(), -60.0);
        let truth = if t >= 5.0 { ModeId::II } else { ModeId::I };
        let fault = library.parameters(truth);
        for _ in 0..10 {
            let tau = generalized_force(&u, fault, &process.layout);
            state = integrate_plant(&process.hydro, &state, &tau, &Vector3::zeros(), 0.01)?;
        }
        u_prev = u;
    }
    Ok(())
}
