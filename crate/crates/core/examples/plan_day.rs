//! Forecasts, optimizes and emits virtual capacity curves for a small
//! campus, then prints the curve of its first cluster next to the carbon
//! forecast.
//!
//! cargo run --release --example plan_day [lambda_p]

use std::collections::BTreeMap;

use cicp::forecasting::{ForecastConfig, RollingForecaster};
use cicp::optimizer::PlannerConfig;
use cicp::synthetic::{carbon_forecast, default_campus, generate_day_records};
use cicp::vcc::{plan_day, ClusterCandidate, PlanRequest};

fn main() -> anyhow::Result<()> {
    let mut planner = PlannerConfig::default();
    if let Some(lp) = std::env::args().nth(1) {
        planner.lambda_p = lp.parse()?;
    }
    let mut spec = default_campus(35, 3);
    spec.clusters.truncate(6);
    let history = generate_day_records(&spec);
    let date = spec.date_of_day(spec.days);

    let clusters = spec
        .clusters
        .iter()
        .map(|c| ClusterCandidate {
            cluster_id: c.cluster_id.clone(),
            campus_id: c.campus_id.clone(),
            grid_zone: c.grid_zone.clone(),
            machine_capacity: c.capacity,
            power_cap_usage: c.power_cap_usage,
            forecast: RollingForecaster::from_history(
                &c.cluster_id,
                ForecastConfig::default(),
                &history[&c.cluster_id],
            )
            .forecast()
            .map_err(|e| e.to_string()),
            power: Ok(c.power()),
        })
        .collect();
    let carbon = spec.zones.iter().map(|z| (z.zone.clone(), carbon_forecast(&spec, z, date))).collect();
    let request = PlanRequest { date, run_id: "example".into(), clusters, campus_limits: BTreeMap::new(), carbon };
    let plan = plan_day(&request, &planner, &BTreeMap::new())?;

    println!(
        "{date}: {} of {} clusters shaped, objective {:.2}",
        plan.shaped_count(),
        plan.clusters.len(),
        plan.objective
    );
    for e in &plan.clusters {
        println!("  {:<4} {:?}  peak {:.1} kW", e.cluster_id, e.status, e.y_kw.unwrap_or(f64::NAN));
    }

    let c = &spec.clusters[0];
    let eta = &request.carbon[&c.grid_zone];
    let curve = plan.curve(&c.cluster_id).expect("every cluster gets a curve");
    let f = request.clusters[0].forecast.clone().map_err(anyhow::Error::msg)?;
    println!("\n{} ({})", c.cluster_id, c.grid_zone);
    println!("hour  carbon  nominal usage    VCC");
    let nominal = f.nominal_usage();
    for h in 0..24 {
        println!("{h:>4}  {:.3}  {:>13.1}  {:>6.1}", eta[h], nominal[h], curve.vcc[h]);
    }
    Ok(())
}
