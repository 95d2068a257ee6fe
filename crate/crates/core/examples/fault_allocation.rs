//! Thrust allocation under each library mode: the same generalized force
//! is requested and the achieved force is checked after projection.

use almpc::allocation::{allocate_damped, generalized_force, project_input, InputLimits, ThrustCommand, ThrusterLayout};
use almpc::estimation::ModeLibrary;
use nalgebra::Vector3;

fn main() -> almpc::Result<()> {
    let layout = ThrusterLayout::default();
    let library = ModeLibrary::default();
    let limits = InputLimits::default();
    let tau = Vector3::new(150.0, -60.0, 25.0);
    println!("requested tau = [{:.1}, {:.1}, {:.1}]", tau[0], tau[1], tau[2]);
    for (id, params) in library.modes() {
        let u = allocate_damped(&tau, params, &layout, 1e-9)?;
        let achieved = generalized_force(&u, params, &layout);
        // from rest, one period of rate limit bounds the first move
        let first = project_input(&u, &ThrustCommand::zeros(), &limits, 0.1);
        println!(
            "mode {:<3} u = [{:7.1} {:7.1} {:7.1} {:7.1}]  residual {:.2e}  first move [{:6.1} {:6.1} {:6.1} {:6.1}]",
            id.label(),
            u[0],
            u[1],
            u[2],
            u[3],
            (achieved - tau).norm(),
            first[0],
            first[1],
            first[2],
            first[3]
        );
    }
    Ok(())
}
