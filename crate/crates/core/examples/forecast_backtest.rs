//! Replays twelve weeks of synthetic cluster history through the rolling
//! day-ahead forecaster and prints median errors.
//!
//! cargo run --release --example forecast_backtest

use cicp::forecasting::{backtest, median, ForecastConfig, RollingForecaster};
use cicp::synthetic::{generate_day_records, template_fleet, ClusterTemplate, ZoneSpec};

fn main() -> anyhow::Result<()> {
    let template = ClusterTemplate { daily_noise: 0.05, hourly_noise: 0.05, ..Default::default() };
    let spec = template_fleet(5, 84, 3, &template, vec![ZoneSpec::default()]);
    let days = generate_day_records(&spec);
    let config = ForecastConfig::default();

    println!("cluster  inflexible  reservations  ratio  flexible   (median APE, %)");
    for (id, recs) in &days {
        let r = backtest(id, config, recs, 28);
        let m = |v: &[f64]| median(v).unwrap_or(f64::NAN) * 100.0;
        println!(
            "{id:<7}  {:>10.2}  {:>12.2}  {:>5.2}  {:>8.2}",
            m(&r.u_inflexible),
            m(&r.t_reservations),
            m(&r.ratio),
            m(&r.t_flexible)
        );
    }

    let (id, recs) = days.iter().next().expect("fleet has clusters");
    let f = RollingForecaster::from_history(id, config, recs).forecast()?;
    println!(
        "\n{id} for {}: reservations {:.0} GCU-h, flexible {:.0}, theta {:.3}",
        f.date, f.t_reservations_hat, f.t_flexible_hat, f.theta
    );
    Ok(())
}
