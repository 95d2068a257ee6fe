//! Scenario overrides from TOML: a custom derating schedule, a bounded
//! disturbance and a shorter horizon, followed by a CSV round trip.

use almpc::scenario::{read_log, run, write_log, ScenarioConfig};

const CONFIG: &str = r#"
case = 1
controller = "almpc"
seed = 11
total_time = 20.0
disturbance_bound = [5.0, 5.0, 1.0]

[[faults]]
t = 8.0
gamma = [1.0, 0.5, 1.0, 1.0]
theta_deg = [0.0, 0.0, 0.0, 10.0]

[ocp]
horizon = 6
"#;

fn main() -> almpc::Result<()> {
    let config = ScenarioConfig::from_toml_str(CONFIG, None)?;
    let log = run(&config)?;
    let s = &log.summary;
    println!("custom fault at {:.1} s labelled {} -> {}", s.transitions[0].t_fault, s.transitions[0].from, s.transitions[0].to);
    println!("RMSE x {:.4} y {:.4}, fallback {}", s.metrics.x.rmse, s.metrics.y.rmse, s.fallback_steps);
    let dir = std::env::temp_dir().join("almpc-custom-scenario");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("run.csv");
    write_log(&log.rows, &path)?;
    let back = read_log(&path)?;
    println!("wrote and re-read {} rows from {}", back.len(), path.display());
    Ok(())
}
