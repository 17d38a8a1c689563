//! Writes a synthetic campus as pipeline inputs: telemetry, topology,
//! carbon forecasts, ground truth and a run config.
//!
//! cargo run --release --example synthetic_fleet -- /tmp/fleet [days] [seed]
//! cicp --config /tmp/fleet/config.toml plan

use std::path::PathBuf;

use cicp::synthetic::{default_campus, write_fixture};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fleet".into()));
    let days: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(35);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let mut spec = default_campus(days, seed);
    spec.clusters.truncate(10);
    let paths = write_fixture(&spec, &dir)?;
    println!("{} clusters, {} days from {}", spec.clusters.len(), spec.days, spec.start_date);
    println!("telemetry  {}", paths.telemetry.display());
    println!("topology   {}", paths.topology.display());
    println!("carbon     {}", paths.carbon.display());
    println!("config     {}", paths.config.display());
    println!("plan for   {}", paths.planning_date);
    Ok(())
}
