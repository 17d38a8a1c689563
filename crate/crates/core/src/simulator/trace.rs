//! Seeded synthetic job traces and their JSON-lines format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Job, SimError, TICKS_PER_DAY, TICKS_PER_HOUR};
use crate::forecasting::HOURS;
use crate::telemetry::Tier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterTraceSpec {
    pub cluster_id: String,
    /// Mean inflexible reservations per hour of day, GCU.
    pub inflexible_profile: Vec<f64>,
    /// Multipliers per day of week, trace day 0 being slot 0.
    pub weekly_factors: Vec<f64>,
    /// Flexible share of daily reserved GCU-hours.
    pub flexible_share: f64,
    pub capacity: f64,
    /// Relative standard deviation of a whole day's level.
    pub daily_noise: f64,
    /// Relative standard deviation of each hour's inflexible level.
    pub hourly_noise: f64,
    pub inflexible_usage_fraction: (f64, f64),
    pub flexible_usage_fraction: (f64, f64),
    pub flexible_size_gcu: (f64, f64),
    pub flexible_duration_ticks: (u64, u64),
    /// Relative arrival weights per hour of day for flexible jobs.
    pub flexible_arrival_profile: Vec<f64>,
}

impl Default for ClusterTraceSpec {
    fn default() -> Self {
        Self {
            cluster_id: "cluster".into(),
            inflexible_profile: vec![500.0; HOURS],
            weekly_factors: vec![1.0; 7],
            flexible_share: 0.3,
            capacity: 1500.0,
            daily_noise: 0.0,
            hourly_noise: 0.0,
            inflexible_usage_fraction: (0.7, 0.9),
            flexible_usage_fraction: (0.75, 0.95),
            flexible_size_gcu: (4.0, 24.0),
            flexible_duration_ticks: (6, 36),
            flexible_arrival_profile: vec![1.0; HOURS],
        }
    }
}

impl ClusterTraceSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(format!("{}: {m}", self.cluster_id)));
        if self.inflexible_profile.len() != HOURS || self.flexible_arrival_profile.len() != HOURS {
            return bad("hourly profiles need 24 entries".into());
        }
        if self.weekly_factors.len() != 7 {
            return bad("weekly_factors needs 7 entries".into());
        }
        if !(0.0..1.0).contains(&self.flexible_share) {
            return bad("flexible_share must lie in [0, 1)".into());
        }
        if self.daily_noise < 0.0 || self.hourly_noise < 0.0 {
            return bad("noise must be non-negative".into());
        }
        let fractions = [self.inflexible_usage_fraction, self.flexible_usage_fraction];
        if fractions.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi && hi <= 1.0)) {
            return bad("usage fractions must lie in (0, 1]".into());
        }
        let (slo, shi) = self.flexible_size_gcu;
        let (dlo, dhi) = self.flexible_duration_ticks;
        if !(slo > 0.0 && slo <= shi) || dlo == 0 || dlo > dhi {
            return bad("flexible job size and duration ranges must be positive".into());
        }
        if self.flexible_arrival_profile.iter().any(|w| *w < 0.0)
            || self.flexible_arrival_profile.iter().sum::<f64>() <= 0.0
        {
            return bad("arrival profile needs positive weight".into());
        }
        let peak_week = self.weekly_factors.iter().copied().fold(0.0, f64::max);
        let inflexible = self.inflexible_profile.iter().sum::<f64>() * peak_week;
        let flexible = self.flexible_volume(inflexible);
        if inflexible + flexible > self.capacity * HOURS as f64 {
            return bad(format!(
                "daily demand {:.1} GCU-h exceeds capacity {:.1} GCU-h",
                inflexible + flexible,
                self.capacity * HOURS as f64
            ));
        }
        Ok(())
    }

    /// Flexible GCU-hours that give the configured share next to
    /// `inflexible` GCU-hours.
    pub fn flexible_volume(&self, inflexible: f64) -> f64 {
        inflexible * self.flexible_share / (1.0 - self.flexible_share)
    }

    /// Expected hourly inflexible level on trace day `day`.
    pub fn inflexible_level(&self, day: u64, hour: usize) -> f64 {
        self.inflexible_profile[hour] * self.weekly_factors[(day % 7) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub clusters: Vec<ClusterTraceSpec>,
    pub days: u64,
}

fn cluster_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

/// Jobs of one cluster for trace days `0..days`, sorted by arrival.
pub fn generate_cluster_trace(spec: &ClusterTraceSpec, days: u64, seed: u64) -> Result<Vec<Job>, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    let mut next_id = 0u64;
    let weights_total: f64 = spec.flexible_arrival_profile.iter().sum();
    let gauss = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (1.0 + sd * z).max(0.0)
    };
    for day in 0..days {
        let start = day * TICKS_PER_DAY;
        let mut day_jobs = Vec::new();
        let day_factor = gauss(&mut rng, spec.daily_noise);
        let mut inflexible_volume = 0.0;
        for h in 0..HOURS {
            let level = spec.inflexible_level(day, h) * day_factor * gauss(&mut rng, spec.hourly_noise);
            inflexible_volume += level;
            // a handful of hour-long jobs summing exactly to the level
            let mut left = level;
            while left > 1e-9 {
                let chunk = (level * rng.random_range(0.15..0.35)).max(1.0).min(left);
                let (lo, hi) = spec.inflexible_usage_fraction;
                day_jobs.push(Job {
                    job_id: 0,
                    tier: Tier::Inflexible,
                    arrival_tick: start + h as u64 * TICKS_PER_HOUR,
                    duration_ticks: TICKS_PER_HOUR,
                    cpu_reserved: chunk,
                    usage_fraction: rng.random_range(lo..=hi),
                });
                left -= chunk;
            }
        }
        let mut flexible_left = spec.flexible_volume(inflexible_volume);
        while flexible_left > 1e-9 {
            let (slo, shi) = spec.flexible_size_gcu;
            let (dlo, dhi) = spec.flexible_duration_ticks;
            let (flo, fhi) = spec.flexible_usage_fraction;
            let duration = rng.random_range(dlo..=dhi);
            let mut size = rng.random_range(slo..=shi);
            let volume = size * duration as f64 / TICKS_PER_HOUR as f64;
            if volume > flexible_left {
                size = flexible_left * TICKS_PER_HOUR as f64 / duration as f64;
            }
            flexible_left -= size * duration as f64 / TICKS_PER_HOUR as f64;
            let mut pick = rng.random_range(0.0..weights_total);
            let mut hour = HOURS - 1;
            for (h, w) in spec.flexible_arrival_profile.iter().enumerate() {
                if pick < *w {
                    hour = h;
                    break;
                }
                pick -= w;
            }
            let tick = start + hour as u64 * TICKS_PER_HOUR + rng.random_range(0..TICKS_PER_HOUR);
            day_jobs.push(Job {
                job_id: 0,
                tier: Tier::Flexible,
                arrival_tick: tick,
                duration_ticks: duration,
                cpu_reserved: size,
                usage_fraction: rng.random_range(flo..=fhi),
            });
        }
        day_jobs.sort_by_key(|j| (j.arrival_tick, j.tier == Tier::Flexible));
        for j in &mut day_jobs {
            j.job_id = next_id;
            next_id += 1;
        }
        jobs.extend(day_jobs);
    }
    Ok(jobs)
}

/// Reproducible traces for every cluster in `config`.
pub fn generate_fleet_trace(config: &TraceConfig, seed: u64) -> Result<BTreeMap<String, Vec<Job>>, SimError> {
    let traces: Result<Vec<_>, SimError> = config
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            Ok((spec.cluster_id.clone(), generate_cluster_trace(spec, config.days, cluster_seed(seed, i))?))
        })
        .collect();
    Ok(traces?.into_iter().collect())
}

/// Arrivals of trace day `day` from a sorted job list.
pub fn jobs_of_day(jobs: &[Job], day: u64) -> &[Job] {
    let lo = jobs.partition_point(|j| j.arrival_tick < day * TICKS_PER_DAY);
    let hi = jobs.partition_point(|j| j.arrival_tick < (day + 1) * TICKS_PER_DAY);
    &jobs[lo..hi]
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    cluster_id: String,
    #[serde(flatten)]
    job: Job,
}

pub fn write_trace<W: Write>(mut w: W, traces: &BTreeMap<String, Vec<Job>>) -> Result<(), SimError> {
    for (cluster_id, jobs) in traces {
        for job in jobs {
            let line = TraceLine { cluster_id: cluster_id.clone(), job: job.clone() };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<BTreeMap<String, Vec<Job>>, SimError> {
    let mut out: BTreeMap<String, Vec<Job>> = BTreeMap::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TraceLine = serde_json::from_str(&line)?;
        out.entry(t.cluster_id).or_default().push(t.job);
    }
    for jobs in out.values_mut() {
        jobs.sort_by_key(|j| (j.arrival_tick, j.job_id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(share: f64) -> ClusterTraceSpec {
        ClusterTraceSpec {
            cluster_id: "c".into(),
            inflexible_profile: (0..HOURS).map(|h| 400.0 + 100.0 * (h as f64 / 4.0).sin()).collect(),
            flexible_share: share,
            ..Default::default()
        }
    }

    #[test]
    fn zero_share_is_all_inflexible() {
        let jobs = generate_cluster_trace(&spec(0.0), 3, 1).unwrap();
        assert!(jobs.iter().all(|j| j.tier == Tier::Inflexible));
    }

    #[test]
    fn deterministic() {
        let cfg = TraceConfig {
            clusters: vec![spec(0.3), ClusterTraceSpec { cluster_id: "d".into(), ..spec(0.2) }],
            days: 2,
        };
        assert_eq!(generate_fleet_trace(&cfg, 9).unwrap(), generate_fleet_trace(&cfg, 9).unwrap());
        assert_ne!(generate_fleet_trace(&cfg, 9).unwrap(), generate_fleet_trace(&cfg, 10).unwrap());
    }

    #[test]
    fn hourly_levels_and_share_match_targets() {
        let s = ClusterTraceSpec { daily_noise: 0.03, hourly_noise: 0.02, ..spec(0.3) };
        let jobs = generate_cluster_trace(&s, 7, 5).unwrap();
        let flex: f64 = jobs.iter().filter(|j| j.tier == Tier::Flexible).map(Job::volume).sum();
        let all: f64 = jobs.iter().map(Job::volume).sum();
        let share = flex / all;
        assert!((0.28..=0.32).contains(&share), "{share}");

        let noiseless = generate_cluster_trace(&spec(0.3), 7, 5).unwrap();
        for day in 0..7 {
            for h in 0..HOURS {
                let tick = day * TICKS_PER_DAY + h as u64 * TICKS_PER_HOUR;
                let level: f64 = noiseless
                    .iter()
                    .filter(|j| j.tier == Tier::Inflexible && j.arrival_tick == tick)
                    .map(|j| j.cpu_reserved)
                    .sum();
                let want = s.inflexible_level(day, h);
                assert!((level - want).abs() <= 0.02 * want);
            }
        }
    }

    #[test]
    fn rejects_overfull_config() {
        let s = ClusterTraceSpec { capacity: 450.0, ..spec(0.3) };
        assert!(matches!(generate_cluster_trace(&s, 1, 1), Err(SimError::Config(_))));
    }

    #[test]
    fn jsonl_round_trip_and_day_slices() {
        let cfg = TraceConfig { clusters: vec![spec(0.3)], days: 3 };
        let t = generate_fleet_trace(&cfg, 2).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let back = read_trace(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, t);
        let jobs = &t["c"];
        let d1 = jobs_of_day(jobs, 1);
        assert!(d1.iter().all(|j| (TICKS_PER_DAY..2 * TICKS_PER_DAY).contains(&j.arrival_tick)));
        assert_eq!(jobs_of_day(jobs, 0).len() + d1.len() + jobs_of_day(jobs, 2).len(), jobs.len());
    }
}
