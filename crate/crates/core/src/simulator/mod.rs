//! Five-minute tick cluster simulator with tier-aware admission control.
//!
//! Inflexible jobs start on arrival. Flexible jobs wait in a FIFO queue and
//! are admitted while the cluster's total reservations plus the candidate fit
//! under the hour's VCC. Completed jobs release their reservations at the
//! start of a tick, before new admissions. The queue and running set carry
//! over between days.

mod experiment;
mod trace;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::forecasting::HOURS;
use crate::power_model::ClusterPowerSensitivity;
use crate::telemetry::{HourlyValues, Tier};

pub use experiment::{
    mean_interval, pin_reservation_quantile, run_experiment, welch_interval, ClusterDay, ExperimentConfig,
    ExperimentSummary, HourComparison, MeanInterval, PairedImpact, MIN_CLUSTERS, MIN_DAYS,
};
pub use trace::{
    generate_cluster_trace, generate_fleet_trace, jobs_of_day, read_trace, write_trace, ClusterTraceSpec, TraceConfig,
};

pub const TICKS_PER_HOUR: u64 = 12;
pub const TICKS_PER_DAY: u64 = TICKS_PER_HOUR * HOURS as u64;
/// Flexible jobs are expected to finish within a day of arriving.
pub const FLEXIBLE_DEADLINE_TICKS: u64 = TICKS_PER_DAY;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace config: {0}")]
    Config(String),
    #[error("reports come from different traces")]
    TraceMismatch,
    #[error("experiment: {0}")]
    Experiment(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: u64,
    pub tier: Tier,
    /// Absolute tick since the start of the trace.
    pub arrival_tick: u64,
    pub duration_ticks: u64,
    pub cpu_reserved: f64,
    /// Usage as a fraction of the reservation, in (0, 1].
    pub usage_fraction: f64,
}

impl Job {
    pub fn usage(&self) -> f64 {
        self.cpu_reserved * self.usage_fraction
    }

    /// Reserved GCU-hours.
    pub fn volume(&self) -> f64 {
        self.cpu_reserved * self.duration_ticks as f64 / TICKS_PER_HOUR as f64
    }
}

/// Digest of a job list, used to pair reports from the same trace.
pub fn trace_digest(jobs: &[Job]) -> String {
    let mut h = Sha256::new();
    for j in jobs {
        h.update(j.job_id.to_le_bytes());
        h.update([j.tier as u8]);
        h.update(j.arrival_tick.to_le_bytes());
        h.update(j.duration_ticks.to_le_bytes());
        h.update(j.cpu_reserved.to_le_bytes());
        h.update(j.usage_fraction.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
struct RunningJob {
    job: Job,
    end_tick: u64,
}

/// Queue and running set of one cluster, carried across days.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub cluster_id: String,
    /// First tick of the next day to simulate.
    pub tick: u64,
    queue: VecDeque<Job>,
    running: Vec<RunningJob>,
}

impl ClusterState {
    pub fn new(cluster_id: impl Into<String>) -> Self {
        Self { cluster_id: cluster_id.into(), tick: 0, queue: VecDeque::new(), running: Vec::new() }
    }

    pub fn starting_at_day(cluster_id: impl Into<String>, day: u64) -> Self {
        Self { tick: day * TICKS_PER_DAY, ..Self::new(cluster_id) }
    }

    pub fn day_index(&self) -> u64 {
        self.tick / TICKS_PER_DAY
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn running_len(&self) -> usize {
        self.running.len()
    }

    fn reserved(&self) -> f64 {
        self.running.iter().map(|r| r.job.cpu_reserved).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub hour: usize,
    pub vcc_gcu: f64,
    /// Tick-averaged reservations and usage, GCU.
    pub r_inflexible: f64,
    pub r_flexible: f64,
    pub u_inflexible: f64,
    pub u_flexible: f64,
    /// Tick-averaged power, kW.
    pub power_kw: f64,
    pub eta_kg_per_kwh: f64,
    pub emissions_kg: f64,
    /// Flexible jobs waiting at the end of the hour.
    pub queue_len: usize,
}

impl HourRecord {
    pub fn hourly_values(&self) -> HourlyValues {
        HourlyValues {
            u_inflexible: self.u_inflexible,
            u_flexible: self.u_flexible,
            r_inflexible: self.r_inflexible,
            r_flexible: self.r_flexible,
            power: self.power_kw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub cluster_id: String,
    pub day: u64,
    pub trace_digest: String,
    pub hours: Vec<HourRecord>,
    /// Usage GCU-hours of flexible jobs that completed during the day.
    pub flexible_gcu_hours_completed: f64,
    pub flexible_jobs_completed: usize,
    /// Flexible jobs completed this day more than 24 h after arrival.
    pub late_completions: usize,
    /// Flexible jobs still queued or running at day end that are already
    /// more than 24 h old.
    pub overdue_pending: usize,
    pub peak_power_kw: f64,
    pub total_emissions_kg: f64,
    /// Reserved GCU-hours demanded by jobs arriving this day.
    pub arriving_reservation_volume: f64,
}

impl SimulationReport {
    pub fn total_reservations(&self) -> f64 {
        self.hours.iter().map(|h| h.r_inflexible + h.r_flexible).sum()
    }

    pub fn total_power(&self) -> f64 {
        self.hours.iter().map(|h| h.power_kw).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.total_power() / self.hours.len() as f64
    }

    pub fn hourly_values(&self) -> Vec<HourlyValues> {
        self.hours.iter().map(HourRecord::hourly_values).collect()
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for h in &self.hours {
            w.serialize(h)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Simulates one day. `jobs` must hold the arrivals of that day sorted by
/// arrival tick; `vcc` and `eta` are hourly.
pub fn run_day(
    state: &mut ClusterState,
    vcc: &[f64],
    jobs: &[Job],
    eta: &[f64],
    power: &ClusterPowerSensitivity,
) -> SimulationReport {
    assert_eq!(vcc.len(), HOURS);
    assert_eq!(eta.len(), HOURS);
    let day_start = state.tick;
    let day_end = day_start + TICKS_PER_DAY;
    debug_assert!(jobs.windows(2).all(|w| w[0].arrival_tick <= w[1].arrival_tick));
    debug_assert!(jobs.iter().all(|j| (day_start..day_end).contains(&j.arrival_tick)));

    let mut hours = Vec::with_capacity(HOURS);
    let mut next_job = 0usize;
    let mut completed_gcu_hours = 0.0;
    let mut completed = 0usize;
    let mut late = 0usize;
    let mut acc = [0.0f64; 5];
    for t in day_start..day_end {
        let h = ((t - day_start) / TICKS_PER_HOUR) as usize;
        state.running.retain(|r| {
            if r.end_tick > t {
                return true;
            }
            if r.job.tier == Tier::Flexible {
                completed += 1;
                completed_gcu_hours += r.job.usage() * r.job.duration_ticks as f64 / TICKS_PER_HOUR as f64;
                if r.end_tick - r.job.arrival_tick > FLEXIBLE_DEADLINE_TICKS {
                    late += 1;
                }
            }
            false
        });
        while next_job < jobs.len() && jobs[next_job].arrival_tick <= t {
            let job = jobs[next_job].clone();
            next_job += 1;
            match job.tier {
                Tier::Inflexible => state.running.push(RunningJob { end_tick: t + job.duration_ticks, job }),
                Tier::Flexible => state.queue.push_back(job),
            }
        }
        let mut reserved = state.reserved();
        while let Some(front) = state.queue.front() {
            if reserved + front.cpu_reserved > vcc[h] + 1e-9 {
                break;
            }
            let job = state.queue.pop_front().expect("front exists");
            reserved += job.cpu_reserved;
            state.running.push(RunningJob { end_tick: t + job.duration_ticks, job });
        }

        let mut tick = [0.0f64; 4];
        for r in &state.running {
            let k = if r.job.tier == Tier::Inflexible { 0 } else { 1 };
            tick[k] += r.job.cpu_reserved;
            tick[k + 2] += r.job.usage();
        }
        for k in 0..4 {
            acc[k] += tick[k];
        }
        acc[4] += power.power(tick[2] + tick[3]);

        if (t - day_start + 1).is_multiple_of(TICKS_PER_HOUR) {
            let n = TICKS_PER_HOUR as f64;
            let power_kw = acc[4] / n;
            hours.push(HourRecord {
                hour: h,
                vcc_gcu: vcc[h],
                r_inflexible: acc[0] / n,
                r_flexible: acc[1] / n,
                u_inflexible: acc[2] / n,
                u_flexible: acc[3] / n,
                power_kw,
                eta_kg_per_kwh: eta[h],
                emissions_kg: power_kw * eta[h],
                queue_len: state.queue.len(),
            });
            acc = [0.0; 5];
        }
    }
    state.tick = day_end;
    let overdue_pending = state
        .queue
        .iter()
        .chain(state.running.iter().filter(|r| r.job.tier == Tier::Flexible).map(|r| &r.job))
        .filter(|j| day_end - j.arrival_tick > FLEXIBLE_DEADLINE_TICKS)
        .count();
    SimulationReport {
        cluster_id: state.cluster_id.clone(),
        day: day_start / TICKS_PER_DAY,
        trace_digest: trace_digest(jobs),
        peak_power_kw: hours.iter().map(|h| h.power_kw).fold(0.0, f64::max),
        total_emissions_kg: hours.iter().map(|h| h.emissions_kg).sum(),
        hours,
        flexible_gcu_hours_completed: completed_gcu_hours,
        flexible_jobs_completed: completed,
        late_completions: late,
        overdue_pending,
        arriving_reservation_volume: jobs.iter().map(Job::volume).sum(),
    }
}

/// Indices of the `k` highest-carbon hours, ties broken by hour.
pub fn top_carbon_hours(eta: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eta.len()).collect();
    idx.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactMetrics {
    /// Percent drop of mean power over the top-carbon hours (positive means
    /// the shaped run used less power).
    pub peak_carbon_power_drop_pct: f64,
    pub emissions_delta_kg: f64,
    pub flexible_completion_delta_gcu_hours: f64,
    pub peak_power_delta_kw: f64,
}

/// Compares a shaped day with the unshaped run of the same trace.
pub fn evaluate_day(
    shaped: &SimulationReport,
    unshaped: &SimulationReport,
    top_k: usize,
) -> Result<ImpactMetrics, SimError> {
    if shaped.trace_digest != unshaped.trace_digest || shaped.hours.len() != unshaped.hours.len() {
        return Err(SimError::TraceMismatch);
    }
    let eta: Vec<f64> = unshaped.hours.iter().map(|h| h.eta_kg_per_kwh).collect();
    let top = top_carbon_hours(&eta, top_k);
    let s: f64 = top.iter().map(|&h| shaped.hours[h].power_kw).sum();
    let u: f64 = top.iter().map(|&h| unshaped.hours[h].power_kw).sum();
    Ok(ImpactMetrics {
        peak_carbon_power_drop_pct: if u > 0.0 { 100.0 * (u - s) / u } else { 0.0 },
        emissions_delta_kg: shaped.total_emissions_kg - unshaped.total_emissions_kg,
        flexible_completion_delta_gcu_hours: shaped.flexible_gcu_hours_completed
            - unshaped.flexible_gcu_hours_completed,
        peak_power_delta_kw: shaped.peak_power_kw - unshaped.peak_power_kw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power_model::PiecewisePowerModel;

    pub(crate) fn linear_power() -> ClusterPowerSensitivity {
        ClusterPowerSensitivity::new("c", vec![(PiecewisePowerModel::new("pd", vec![0.0], vec![1.0], 100.0), 1.0)])
    }

    fn job(id: u64, tier: Tier, arrival: u64, dur: u64, size: f64) -> Job {
        Job { job_id: id, tier, arrival_tick: arrival, duration_ticks: dur, cpu_reserved: size, usage_fraction: 1.0 }
    }

    fn ledger_jobs() -> Vec<Job> {
        let mut jobs = vec![job(0, Tier::Inflexible, 0, TICKS_PER_DAY, 20.0)];
        jobs.extend((1..=120).map(|i| job(i, Tier::Flexible, 0, 12, 10.0)));
        jobs
    }

    #[test]
    fn hand_ledger() {
        let vcc: Vec<f64> = (0..HOURS).map(|h| if h < 12 { 50.0 } else { 150.0 }).collect();
        let mut st = ClusterState::new("c");
        let r = run_day(&mut st, &vcc, &ledger_jobs(), &[0.5; HOURS], &linear_power());
        for (h, rec) in r.hours.iter().enumerate() {
            let want = match h {
                0..=11 => 30.0,
                12..=17 => 130.0,
                18 => 60.0,
                _ => 0.0,
            };
            assert!((rec.r_flexible - want).abs() < 1e-9, "hour {h}: {}", rec.r_flexible);
            assert!((rec.r_inflexible - 20.0).abs() < 1e-9);
        }
        assert_eq!(r.flexible_jobs_completed, 120);
        assert!((r.flexible_gcu_hours_completed - 1200.0).abs() < 1e-9);
        assert_eq!(r.hours[18].queue_len, 0);
        assert_eq!(r.hours[17].queue_len, 6);
        assert_eq!(st.queue_len(), 0);
        let total: f64 = r.hours.iter().map(|h| h.power_kw * h.eta_kg_per_kwh).sum();
        assert!((total - r.total_emissions_kg).abs() < 1e-9);
    }

    #[test]
    fn capacity_curve_with_light_load_never_queues() {
        let jobs = vec![job(0, Tier::Inflexible, 0, 50, 30.0), job(1, Tier::Flexible, 3, 20, 10.0)];
        let mut a = ClusterState::new("c");
        let r = run_day(&mut a, &[1000.0; HOURS], &jobs, &[0.3; HOURS], &linear_power());
        assert!(r.hours.iter().all(|h| h.queue_len == 0));
        let mut b = ClusterState::new("c");
        let r2 = run_day(&mut b, &[1e12; HOURS], &jobs, &[0.3; HOURS], &linear_power());
        assert_eq!(
            r.hours.iter().map(|h| h.power_kw).collect::<Vec<_>>(),
            r2.hours.iter().map(|h| h.power_kw).collect::<Vec<_>>()
        );
    }

    #[test]
    fn inflexible_ignores_vcc_and_queue_carries_over() {
        let jobs = vec![job(0, Tier::Inflexible, 0, 24, 80.0), job(1, Tier::Flexible, 0, 12, 10.0)];
        let mut st = ClusterState::new("c");
        let r = run_day(&mut st, &[50.0; HOURS], &jobs, &[0.3; HOURS], &linear_power());
        assert!((r.hours[0].r_inflexible - 80.0).abs() < 1e-9);
        assert!(r.hours[0].r_flexible == 0.0 && r.hours[2].r_flexible == 10.0);

        let jobs = vec![job(0, Tier::Flexible, 280, 12, 10.0)];
        let mut st = ClusterState::new("c");
        let r = run_day(&mut st, &[0.0; HOURS], &jobs, &[0.3; HOURS], &linear_power());
        assert_eq!(r.hours[23].queue_len, 1);
        assert_eq!(st.queue_len(), 1);
        let r2 = run_day(&mut st, &[100.0; HOURS], &[], &[0.3; HOURS], &linear_power());
        assert_eq!(r2.flexible_jobs_completed, 1);
        assert_eq!(r2.late_completions, 0);
    }

    #[test]
    fn late_jobs_are_counted() {
        let jobs = vec![job(0, Tier::Flexible, 0, 12, 10.0)];
        let mut st = ClusterState::new("c");
        run_day(&mut st, &[0.0; HOURS], &jobs, &[0.3; HOURS], &linear_power());
        let r = run_day(&mut st, &[0.0; HOURS], &[], &[0.3; HOURS], &linear_power());
        assert_eq!(r.overdue_pending, 1);
        let r = run_day(&mut st, &[10.0; HOURS], &[], &[0.3; HOURS], &linear_power());
        assert_eq!(r.late_completions, 1);
    }

    #[test]
    fn shaping_against_carbon_cuts_emissions() {
        let eta: Vec<f64> =
            (0..HOURS).map(|h| 0.4 + 0.3 * (2.0 * std::f64::consts::PI * h as f64 / 24.0).sin()).collect();
        // VCC low where carbon is high, same daily total as demand + slack
        let vcc: Vec<f64> = eta.iter().map(|e| 20.0 + 400.0 * (0.75 - e)).collect();
        let mut jobs = vec![job(0, Tier::Inflexible, 0, TICKS_PER_DAY, 20.0)];
        jobs.extend((1..=100).map(|i| job(i, Tier::Flexible, (i - 1) * 2, 12, 10.0)));
        let p = linear_power();
        let shaped = run_day(&mut ClusterState::new("c"), &vcc, &jobs, &eta, &p);
        let flat = run_day(&mut ClusterState::new("c"), &[1000.0; HOURS], &jobs, &eta, &p);
        assert!(shaped.total_emissions_kg < flat.total_emissions_kg);
        let m = evaluate_day(&shaped, &flat, 3).unwrap();
        assert!(m.peak_carbon_power_drop_pct > 0.0 && m.emissions_delta_kg < 0.0);
    }

    fn report(power: &[f64], eta: &[f64], digest: &str) -> SimulationReport {
        SimulationReport {
            cluster_id: "c".into(),
            day: 0,
            trace_digest: digest.into(),
            hours: power
                .iter()
                .zip(eta)
                .enumerate()
                .map(|(h, (&p, &e))| HourRecord {
                    hour: h,
                    vcc_gcu: 0.0,
                    r_inflexible: 0.0,
                    r_flexible: 0.0,
                    u_inflexible: 0.0,
                    u_flexible: 0.0,
                    power_kw: p,
                    eta_kg_per_kwh: e,
                    emissions_kg: p * e,
                    queue_len: 0,
                })
                .collect(),
            flexible_gcu_hours_completed: 0.0,
            flexible_jobs_completed: 0,
            late_completions: 0,
            overdue_pending: 0,
            peak_power_kw: power.iter().copied().fold(0.0, f64::max),
            total_emissions_kg: power.iter().zip(eta).map(|(p, e)| p * e).sum(),
            arriving_reservation_volume: 0.0,
        }
    }

    #[test]
    fn evaluate_examples() {
        let eta = [0.5, 0.2];
        let a = report(&[100.0, 100.0], &eta, "t");
        let m = evaluate_day(&a, &a, 1).unwrap();
        assert_eq!(m.peak_carbon_power_drop_pct, 0.0);
        assert_eq!(m.emissions_delta_kg, 0.0);
        let b = report(&[92.0, 108.0], &eta, "t");
        let m = evaluate_day(&b, &a, 1).unwrap();
        assert!((m.peak_carbon_power_drop_pct - 8.0).abs() < 1e-12);
        assert!(evaluate_day(&b, &report(&[1.0, 1.0], &eta, "other"), 1).is_err());
    }

    #[test]
    fn top_hours() {
        assert_eq!(top_carbon_hours(&[0.1, 0.9, 0.5, 0.9], 2), vec![1, 3]);
    }
}
