//! Runs every workbench command on a scenario file.
//!
//! `cargo run --example scenario_workbench -- [scenario.toml] [out_dir]`

use std::path::PathBuf;

use evoctl::scenario::load_scenario;
use evoctl::workbench::{run, Command};

fn main() -> evoctl::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/impulsive_nonlocal.toml")
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("evoctl-workbench"));
    let scenario = load_scenario(&scenario)?;
    for command in [
        Command::Verify,
        Command::Gramian,
        Command::Solve,
        Command::Sweep,
        Command::Oracle,
    ] {
        let report = run(
            command,
            &scenario,
            out.join(format!("{command:?}").to_lowercase()),
        )?;
        println!("{}\n", report.summary());
    }
    println!("outputs under {}", out.display());
    Ok(())
}
