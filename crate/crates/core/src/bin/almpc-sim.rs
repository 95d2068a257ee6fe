//! Closed-loop scenario runner: writes the run CSV, a TOML summary and,
//! on request, per-solve telemetry.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use almpc::scenario::{self, run_partial, ControllerKind, ScenarioConfig};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "almpc-sim", version, about = "Fault-tolerant AUV tracking scenarios")]
struct Cli {
    /// Scenario: 1 (single fault) or 2 (two faults).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    case: Option<u8>,
    /// Controller: almpc, ampc or bsc.
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Seed for measurement noise and disturbances.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// TOML override file; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write one CSV line per horizon solve.
    #[arg(long)]
    dump_telemetry: bool,
}

fn load_config(cli: &Cli) -> almpc::Result<ScenarioConfig> {
    let mut table = match &cli.config {
        Some(path) => toml::from_str::<toml::Table>(&std::fs::read_to_string(path)?)?,
        None => toml::Table::new(),
    };
    if let Some(c) = cli.case {
        table.insert("case".into(), toml::Value::Integer(c.into()));
    }
    if let Some(c) = cli.controller {
        table.insert("controller".into(), toml::Value::String(c.as_str().into()));
    }
    if let Some(s) = cli.seed {
        let s = i64::try_from(s).map_err(|_| almpc::Error::InvalidConfig("seed exceeds the TOML integer range".into()))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    let text = toml::to_string(&table).map_err(|e| almpc::Error::InvalidConfig(e.to_string()))?;
    let base = cli.config.as_deref().and_then(Path::parent);
    ScenarioConfig::from_toml_str(&text, base)
}

fn execute(cli: &Cli) -> almpc::Result<()> {
    let mut config = load_config(cli)?;
    config.collect_telemetry = cli.dump_telemetry;
    std::fs::create_dir_all(&cli.out)?;
    let stem = format!("case{}_{}", config.case.number(), config.controller);
    let csv_path = cli.out.join(format!("{stem}.csv"));
    // fail early on an unwritable destination
    scenario::write_log(&[], &csv_path)?;

    let (log, failure) = run_partial(&config);
    scenario::write_log(&log.rows, &csv_path)?;
    scenario::write_summary(&log.summary, cli.out.join(format!("{stem}_summary.toml")))?;
    if cli.dump_telemetry {
        scenario::write_telemetry(&log.telemetry, cli.out.join(format!("{stem}_telemetry.csv")))?;
    }
    if let Some(err) = failure {
        return Err(err);
    }
    let m = &log.summary.metrics;
    println!(
        "{stem}: {} steps, RMSE x {:.4} m, y {:.4} m, psi {:.4} rad, fallback {}/{}",
        log.summary.steps, m.x.rmse, m.y.rmse, m.psi.rmse, log.summary.fallback_steps, log.rows.len()
    );
    for tr in &log.summary.transitions {
        println!("  fault at {:.1} s ({} -> {}): T_det {}, T_acc {}", tr.t_fault, tr.from, tr.to, tr.t_det, tr.t_acc);
    }
    println!("  wrote {}", csv_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("almpc-sim: {e}");
            ExitCode::FAILURE
        }
    }
}
