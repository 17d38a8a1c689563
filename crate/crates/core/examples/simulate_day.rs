//! Runs one cluster through a week of unconstrained admission, then a day
//! under a shaped curve and the same day unshaped, and compares them.
//!
//! cargo run --release --example simulate_day

use std::collections::BTreeMap;

use cicp::forecasting::{ForecastConfig, RollingForecaster, HOURS};
use cicp::optimizer::PlannerConfig;
use cicp::simulator::{evaluate_day, generate_cluster_trace, jobs_of_day, run_day, ClusterState};
use cicp::synthetic::{carbon_forecast, default_campus, generate_day_records};
use cicp::vcc::{plan_day, ClusterCandidate, PlanRequest};

fn main() -> anyhow::Result<()> {
    let mut spec = default_campus(29, 9);
    spec.clusters.truncate(1);
    let c = &spec.clusters[0];
    let day = spec.days - 1;
    let date = spec.date_of_day(day);
    let jobs = generate_cluster_trace(&c.trace_spec(), spec.days, 9)?;
    let history = generate_day_records(&spec);
    let eta = carbon_forecast(&spec, spec.zone(&c.grid_zone).expect("zone exists"), date);

    let hist = &history[&c.cluster_id][..day as usize];
    let request = PlanRequest {
        date,
        run_id: "example".into(),
        clusters: vec![ClusterCandidate {
            cluster_id: c.cluster_id.clone(),
            campus_id: c.campus_id.clone(),
            grid_zone: c.grid_zone.clone(),
            machine_capacity: c.capacity,
            power_cap_usage: c.power_cap_usage,
            forecast: RollingForecaster::from_history(&c.cluster_id, ForecastConfig::default(), hist)
                .forecast()
                .map_err(|e| e.to_string()),
            power: Ok(c.power()),
        }],
        campus_limits: BTreeMap::new(),
        carbon: BTreeMap::from([(c.grid_zone.clone(), eta.clone())]),
    };
    let planner = PlannerConfig { lambda_p: 0.5, ..Default::default() };
    let plan = plan_day(&request, &planner, &BTreeMap::new())?;
    let vcc = &plan.curve(&c.cluster_id).expect("curve").vcc;

    let power = c.power();
    let open = vec![c.capacity; HOURS];
    let mut state = ClusterState::new(c.cluster_id.clone());
    for d in 0..day {
        run_day(&mut state, &open, jobs_of_day(&jobs, d), &eta, &power);
    }
    let mut base_state = state.clone();
    let shaped = run_day(&mut state, vcc, jobs_of_day(&jobs, day), &eta, &power);
    let base = run_day(&mut base_state, &open, jobs_of_day(&jobs, day), &eta, &power);
    let impact = evaluate_day(&shaped, &base, 3)?;

    println!("{} on {date}", c.cluster_id);
    println!("hour  carbon     VCC  shaped kW  unshaped kW");
    for h in 0..HOURS {
        println!(
            "{h:>4}  {:.3}  {:>6.1}  {:>9.1}  {:>11.1}",
            eta[h], vcc[h], shaped.hours[h].power_kw, base.hours[h].power_kw
        );
    }
    println!(
        "top-3 carbon hours power drop {:.2}%, emissions {:+.1} kg, late completions {}",
        impact.peak_carbon_power_drop_pct, impact.emissions_delta_kg, shaped.late_completions
    );
    Ok(())
}
