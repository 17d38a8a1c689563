//! Parses a carbon forecast document, drops two hours and aligns it to a
//! local planning day.
//!
//! cargo run --release --example carbon_alignment

use cicp::carbon::{align_to_planning_day, parse_carbon_document, parse_carbon_forecast};
use cicp::synthetic::{carbon_document, default_campus};

fn main() -> anyhow::Result<()> {
    let spec = default_campus(7, 1);
    let zone = &spec.zones[0];
    let date = spec.date_of_day(6);
    let labeler = spec.labeler();

    let mut doc = carbon_document(&spec, zone, date);
    let full = align_to_planning_day(&parse_carbon_document(doc.clone())?, date, labeler)?;
    // the document starts two hours early; knock out local 12:00 and 13:00
    doc.forecast.drain(14..16);
    let gappy = align_to_planning_day(&parse_carbon_forecast(&serde_json::to_string(&doc)?)?, date, labeler)?;

    println!("{} {} (UTC{:+})", zone.zone, date, spec.utc_offset_hours);
    println!("hour   full    gappy   (kg/kWh)");
    for h in 0..24 {
        println!("{h:>4}  {:.4}  {:.4}", full[h], gappy[h]);
    }
    Ok(())
}
