//! Plans and simulates the three archetype clusters: x and y differ in
//! reservation forecast uncertainty, z has little flexible load.
//!
//! cargo run --release --example archetypes

use cicp::simulator::{run_experiment, ExperimentConfig};
use cicp::synthetic::{archetype_fleet, cluster_archetypes};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig { days: 30, treatment_probability: 1.0, ..Default::default() };
    if let Some(lp) = std::env::args().nth(1) {
        cfg.planner.lambda_p = lp.parse()?;
    }
    println!("arch  VCC/demand  top-hour drop  linearized  flexible drop  shaped/days");
    for (name, _) in cluster_archetypes() {
        let fleet = archetype_fleet(name, 10, cfg.warmup_days + cfg.days, 11).expect("known archetype");
        let s = run_experiment(&fleet, &cfg)?;
        println!(
            "{name:>4}  {:>10.3}  {:>12.2}%  {:>9.2}%  {:>12.2}%  {:>5}/{}",
            s.vcc_over_demand,
            s.realized_drop_pct.mean,
            s.linearized_drop_pct.mean,
            s.flexible_drop_pct.mean,
            s.shaped_days,
            s.cluster_days
        );
    }
    Ok(())
}
