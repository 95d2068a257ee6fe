//! Open-loop plant: a surge-and-yaw thrust pulse, then coasting under
//! damping. Kinetic energy must decay once the thrusters stop.

use almpc::allocation::{generalized_force, FaultParameters, ThrustCommand, ThrusterLayout};
use almpc::dynamics::{integrate_plant, HydroModel, VehicleState};
use nalgebra::Vector3;

fn main() -> almpc::Result<()> {
    let hydro = HydroModel::default();
    let layout = ThrusterLayout::default();
    let mut state = VehicleState::zero();
    let dt = 0.01;
    let w = Vector3::zeros();
    println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>10}", "t", "x", "y", "psi", "u", "energy");
    for k in 0..=1000 {
        let t = k as f64 * dt;
        let u = if t < 3.0 { ThrustCommand::new(120.0, 80.0, 120.0, 80.0) } else { ThrustCommand::zeros() };
        let tau = generalized_force(&u, &FaultParameters::nominal(), &layout);
        if k % 100 == 0 {
            println!(
                "{t:5.1} {:8.3} {:8.3} {:8.3} {:8.3} {:10.3}",
                state.eta[0],
                state.eta[1],
                state.eta[2],
                state.nu[0],
                hydro.kinetic_energy(&state.nu)
            );
        }
        state = integrate_plant(&hydro, &state, &tau, &w, dt)?;
    }
    Ok(())
}
