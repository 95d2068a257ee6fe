//! One Lyapunov-constrained horizon solve from a perturbed state, for the
//! healthy vehicle and with thruster 1 lost.

use almpc::allocation::{FaultParameters, InputLimits, ThrustCommand};
use almpc::backstepping::{auxiliary_law, error_variables};
use almpc::dynamics::VehicleState;
use almpc::lmpc::{build_ocp, solve_ocp, warm_start, OcpConfig, PredictionModel};
use almpc::scenario::{reference, reference_horizon, CaseId};
use nalgebra::Vector3;

fn main() -> almpc::Result<()> {
    let model = PredictionModel::default();
    let cfg = OcpConfig::default();
    let t = 4.0;
    let r = reference(t, CaseId::One);
    let state = VehicleState::new(r.eta_d + Vector3::new(0.08, -0.05, 0.03), r.nu_d());
    let refs = reference_horizon(CaseId::One, t, cfg.dt, cfg.horizon, r.eta_d[2]);
    let xi0 = error_variables(&state, &refs[0]).augmented(Vector3::zeros());
    let tau_b = auxiliary_law(&state, &refs[0], &model.gains, &model.hydro);
    for (name, mode) in [("healthy", FaultParameters::nominal()), ("thruster 1 lost", FaultParameters::blocked(0))] {
        let ocp = build_ocp(xi0, refs.clone(), mode, ThrustCommand::zeros(), InputLimits::default(), cfg.clone(), model.clone())?;
        let ws = warm_start(&mode, &model.layout, &tau_b, None, cfg.horizon, 1e-6)?;
        let sol = solve_ocp(&ocp, &ws)?;
        let u = sol.u_sequence[0];
        println!("{name}: status {} after {} iterations, KKT {:.1e}", sol.status, sol.iterations, sol.kkt_residual);
        println!("  first move [{:.1} {:.1} {:.1} {:.1}] N", u[0], u[1], u[2], u[3]);
        println!(
            "  V(xi1) - V(xi0) = {:.4e}, required <= {:.4e}, cost {:.4e}",
            sol.first_step_descent, sol.descent_bound, sol.cost
        );
    }
    Ok(())
}
