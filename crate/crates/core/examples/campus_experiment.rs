//! Randomized treatment/control experiment on a 20-cluster synthetic campus.
//!
//! cargo run --release --example campus_experiment [seed]

use cicp::simulator::{run_experiment, ExperimentConfig};
use cicp::synthetic::default_campus;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let cfg = ExperimentConfig { seed, ..Default::default() };
    let fleet = default_campus(cfg.warmup_days + cfg.days, seed);
    let t0 = std::time::Instant::now();
    let s = run_experiment(&fleet, &cfg)?;
    println!("{} clusters x {} days in {:.1?}", s.clusters, s.days, t0.elapsed());
    println!(
        "treated {} (shaped {}, fallback {}) of {}",
        s.treated_days, s.shaped_days, s.fallback_days, s.cluster_days
    );
    let d = s.top_carbon_difference;
    println!(
        "top-{} carbon hours: treated - control = {:+.4} [{:+.4}, {:+.4}]  ({:.2}% drop)",
        cfg.top_k, d.mean, d.lower, d.upper, s.top_carbon_drop_pct
    );
    let e = s.emissions_delta_kg;
    println!("emissions delta per shaped day: {:+.1} kg [{:+.1}, {:+.1}]", e.mean, e.lower, e.upper);
    println!(
        "paired top-hour power drop {:.2}%, linearized {:.2}%",
        s.realized_drop_pct.mean, s.linearized_drop_pct.mean
    );
    println!("VCC / demand on shaped days: {:.3}", s.vcc_over_demand);
    println!("late completions: {} total, {} with sufficient VCC", s.late_total, s.late_with_sufficient_capacity);
    println!("\nhour  treated  control");
    for h in &s.hourly {
        println!("{:>4}  {:.4}   {:.4}", h.hour, h.treated.mean, h.control.mean);
    }
    Ok(())
}
