//! Two-fault scenario (loss at 10 s, partial recovery with a derated and
//! misaligned thruster at 20 s): metric table for all three controllers.

use almpc::scenario::{run, CaseId, ControllerKind, ScenarioConfig};

fn main() -> almpc::Result<()> {
    println!("{:<6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "", "RMSE x", "RMSE y", "RMSE psi", "IAE x", "IAE y", "IAE psi");
    for controller in [ControllerKind::Almpc, ControllerKind::Ampc, ControllerKind::Bsc] {
        let m = run(&ScenarioConfig::for_case(CaseId::Two, controller))?.summary.metrics;
        println!(
            "{:<6} {:9.4} {:9.4} {:9.4} {:9.4} {:9.4} {:9.4}",
            controller.as_str(),
            m.x.rmse,
            m.y.rmse,
            m.psi.rmse,
            m.x.iae,
            m.y.iae,
            m.psi.iae
        );
    }
    Ok(())
}
