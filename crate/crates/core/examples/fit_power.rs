//! Fits piecewise-linear power models to synthetic PD telemetry and
//! compares them with the generating curves.
//!
//! cargo run --release --example fit_power

use cicp::power_model::{fit_pd_model, fit_pd_model_auto, mape};
use cicp::synthetic::{generate_telemetry, pd_fleet};
use cicp::telemetry::pd_observations;

fn main() -> anyhow::Result<()> {
    let spec = pd_fleet(3, 4, 21, 5);
    let t = generate_telemetry(&spec);
    let obs = pd_observations(&t.samples);

    println!("pd            segs  breakpoint(true)  fit MAPE  auto segs");
    for c in &spec.clusters {
        for pd in &c.pds {
            let data = &obs[&pd.pd_id];
            let m = fit_pd_model(&pd.pd_id, data, 2)?;
            let auto = fit_pd_model_auto(&pd.pd_id, data)?;
            println!(
                "{:<12}  {:>4}  {:>7.1} ({:>6.1})  {:>7.3}%  {:>9}",
                pd.pd_id,
                m.n_segments(),
                m.breakpoints.get(1).copied().unwrap_or(f64::NAN),
                pd.breakpoint_gcu,
                m.fit_mape * 100.0,
                auto.n_segments()
            );
        }
    }

    // the whole-series error against the true model, for one PD
    let pd = &spec.clusters[0].pds[0];
    let truth = pd.model();
    println!("\ntrue model of {} on its own telemetry: {:.3}% MAPE", pd.pd_id, mape(&truth, &obs[&pd.pd_id]) * 100.0);
    Ok(())
}
