//! Seeded synthetic fleets: load processes, PD power models, carbon curves,
//! telemetry and the ground-truth sidecar used to check fits and plans.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{CarbonDocument, CarbonPoint};
use crate::forecasting::{DayRecord, HOURS};
use crate::power_model::{ClusterPowerSensitivity, PiecewisePowerModel};
use crate::simulator::{ClusterTraceSpec, TICKS_PER_HOUR};
use crate::telemetry::{
    CampusContract, ClusterTopology, HourLabeler, HourlyValues, Tier, Topology, UsageSample, SAMPLE_SECONDS,
};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid fleet spec: {0}")]
    Invalid(String),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Two-segment PD power curve plus the PD's share of cluster usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdSpec {
    pub pd_id: String,
    pub usage_share: f64,
    pub idle_kw: f64,
    pub breakpoint_gcu: f64,
    pub slope_low: f64,
    pub slope_high: f64,
}

impl PdSpec {
    pub fn model(&self) -> PiecewisePowerModel {
        PiecewisePowerModel::new(
            self.pd_id.clone(),
            vec![0.0, self.breakpoint_gcu],
            vec![self.slope_low, self.slope_high],
            self.idle_kw,
        )
    }
}

/// Daily carbon-intensity cycle of a grid zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoneSpec {
    pub zone: String,
    pub mean_g_per_kwh: f64,
    /// Relative amplitude of the daily cosine.
    pub amplitude: f64,
    /// Local hour of peak intensity.
    pub peak_hour: f64,
    pub daily_noise: f64,
    pub hourly_noise: f64,
    /// Relative error of the published forecast.
    pub forecast_noise: f64,
}

impl Default for ZoneSpec {
    fn default() -> Self {
        Self {
            zone: "zone".into(),
            mean_g_per_kwh: 400.0,
            amplitude: 0.3,
            peak_hour: 19.0,
            daily_noise: 0.05,
            hourly_noise: 0.02,
            forecast_noise: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub cluster_id: String,
    pub campus_id: String,
    pub grid_zone: String,
    pub capacity: f64,
    pub power_cap_usage: f64,
    pub pds: Vec<PdSpec>,
    /// Load process; its `cluster_id` and `capacity` are taken from here.
    pub load: ClusterTraceSpec,
    /// When set, the daily-reservation error quantile is pinned to this
    /// value instead of learned.
    #[serde(default)]
    pub reservation_error_quantile: Option<f64>,
}

impl ClusterSpec {
    pub fn trace_spec(&self) -> ClusterTraceSpec {
        ClusterTraceSpec { cluster_id: self.cluster_id.clone(), capacity: self.capacity, ..self.load.clone() }
    }

    pub fn power(&self) -> ClusterPowerSensitivity {
        ClusterPowerSensitivity::new(
            self.cluster_id.clone(),
            self.pds.iter().map(|p| (p.model(), p.usage_share)).collect(),
        )
    }

    pub fn mean_usage_fraction(&self, tier: Tier) -> f64 {
        let (lo, hi) = match tier {
            Tier::Inflexible => self.load.inflexible_usage_fraction,
            Tier::Flexible => self.load.flexible_usage_fraction,
        };
        0.5 * (lo + hi)
    }

    pub fn topology(&self) -> ClusterTopology {
        ClusterTopology {
            cluster_id: self.cluster_id.clone(),
            campus_id: self.campus_id.clone(),
            grid_zone: self.grid_zone.clone(),
            pd_ids: self.pds.iter().map(|p| p.pd_id.clone()).collect(),
            machine_capacity: self.capacity,
            power_cap_usage: self.power_cap_usage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub seed: u64,
    /// Local date of trace day 0.
    pub start_date: NaiveDate,
    pub days: u64,
    #[serde(default = "default_offset")]
    pub utc_offset_hours: i32,
    /// Relative noise of each 5-minute PD usage sample.
    #[serde(default)]
    pub usage_noise: f64,
    /// Multiplicative noise of each PD power sample.
    #[serde(default)]
    pub power_noise: f64,
    pub clusters: Vec<ClusterSpec>,
    pub zones: Vec<ZoneSpec>,
    #[serde(default)]
    pub campuses: Vec<CampusContract>,
}

fn default_offset() -> i32 {
    -8
}

impl FleetSpec {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fleet spec serializes")
    }

    pub fn labeler(&self) -> HourLabeler {
        HourLabeler::new(self.utc_offset_hours)
    }

    pub fn date_of_day(&self, day: u64) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    pub fn zone(&self, zone: &str) -> Option<&ZoneSpec> {
        self.zones.iter().find(|z| z.zone == zone)
    }

    pub fn cluster(&self, cluster_id: &str) -> Option<&ClusterSpec> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        if self.usage_noise < 0.0 || self.power_noise < 0.0 {
            return bad("noise must be non-negative".into());
        }
        for c in &self.clusters {
            c.trace_spec().validate().map_err(|e| SpecError::Invalid(e.to_string()))?;
            if self.zone(&c.grid_zone).is_none() {
                return bad(format!("{}: unknown zone {}", c.cluster_id, c.grid_zone));
            }
            let share: f64 = c.pds.iter().map(|p| p.usage_share).sum();
            if c.pds.is_empty() || (share - 1.0).abs() > 1e-9 || c.pds.iter().any(|p| p.usage_share < 0.0) {
                return bad(format!("{}: PD usage shares must be non-negative and sum to 1", c.cluster_id));
            }
            if c.pds.iter().any(|p| !p.model().is_valid()) {
                return bad(format!("{}: invalid PD power model", c.cluster_id));
            }
        }
        for z in &self.zones {
            if z.mean_g_per_kwh <= 0.0 || !(0.0..1.0).contains(&z.amplitude) {
                return bad(format!("zone {}: mean must be positive and amplitude in [0, 1)", z.zone));
            }
            if z.daily_noise < 0.0 || z.hourly_noise < 0.0 || z.forecast_noise < 0.0 {
                return bad(format!("zone {}: noise must be non-negative", z.zone));
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Topology {
        Topology {
            clusters: self.clusters.iter().map(ClusterSpec::topology).collect(),
            campuses: self.campuses.clone(),
        }
    }

    /// Power curves, load processes and carbon parameters behind the
    /// generated data.
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            seed: self.seed,
            start_date: self.start_date,
            utc_offset_hours: self.utc_offset_hours,
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterTruth {
                    cluster_id: c.cluster_id.clone(),
                    power: c.power(),
                    load: c.trace_spec(),
                    reservation_error_quantile: c.reservation_error_quantile,
                })
                .collect(),
            zones: self.zones.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTruth {
    pub cluster_id: String,
    pub power: ClusterPowerSensitivity,
    pub load: ClusterTraceSpec,
    pub reservation_error_quantile: Option<f64>,
}

/// Sidecar written next to generated telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub utc_offset_hours: i32,
    pub clusters: Vec<ClusterTruth>,
    pub zones: Vec<ZoneSpec>,
}

impl GroundTruth {
    pub fn cluster(&self, cluster_id: &str) -> Option<&ClusterTruth> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }
}

/// splitmix64 step, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn str_seed(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

const TAG_LOAD: u64 = 1;
const TAG_TELEMETRY: u64 = 2;
const TAG_CARBON: u64 = 3;
const TAG_CARBON_FORECAST: u64 = 4;

/// Expected-value hourly series of each cluster for days `0..spec.days`:
/// inflexible reservations follow the load profile with daily and hourly
/// noise, flexible reservations spread the day's flexible volume over the
/// arrival profile, usage applies the mean usage fractions.
pub fn generate_day_records(spec: &FleetSpec) -> BTreeMap<String, Vec<DayRecord>> {
    spec.clusters.par_iter().enumerate().map(|(i, c)| (c.cluster_id.clone(), cluster_day_records(spec, i, c))).collect()
}

fn cluster_day_records(spec: &FleetSpec, index: usize, c: &ClusterSpec) -> Vec<DayRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(spec.seed, TAG_LOAD), index as u64));
    let load = c.trace_spec();
    let power = c.power();
    let f_if = c.mean_usage_fraction(Tier::Inflexible);
    let f_f = c.mean_usage_fraction(Tier::Flexible);
    let weights: f64 = load.flexible_arrival_profile.iter().sum();
    (0..spec.days)
        .map(|d| {
            let day_factor = (1.0 + load.daily_noise * normal(&mut rng)).max(0.05);
            let flex_factor = (1.0 + load.daily_noise * normal(&mut rng)).max(0.05);
            let r_if: Vec<f64> = (0..HOURS)
                .map(|h| {
                    load.inflexible_level(d, h) * day_factor * (1.0 + load.hourly_noise * normal(&mut rng)).max(0.05)
                })
                .collect();
            let volume = load.flexible_volume(r_if.iter().sum()) * flex_factor;
            let hours = (0..HOURS)
                .map(|h| {
                    let r_f = volume * load.flexible_arrival_profile[h] / weights;
                    let u_inflexible = r_if[h] * f_if;
                    let u_flexible = r_f * f_f;
                    HourlyValues {
                        u_inflexible,
                        u_flexible,
                        r_inflexible: r_if[h],
                        r_flexible: r_f,
                        power: power.power(u_inflexible + u_flexible),
                    }
                })
                .collect();
            DayRecord { date: spec.date_of_day(d), hours }
        })
        .collect()
}

pub struct SyntheticTelemetry {
    pub samples: Vec<UsageSample>,
    pub topology: Topology,
    pub truth: GroundTruth,
    pub days: BTreeMap<String, Vec<DayRecord>>,
}

/// Five-minute PD telemetry for the whole fleet. Each PD carries its share
/// of the cluster's hourly usage and reservations on every sample; usage
/// noise perturbs individual samples, power noise is multiplicative.
pub fn generate_telemetry(spec: &FleetSpec) -> SyntheticTelemetry {
    let days = generate_day_records(spec);
    let labeler = spec.labeler();
    let per_cluster: Vec<Vec<UsageSample>> = spec
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(spec.seed, TAG_TELEMETRY), i as u64));
            let mut out = Vec::new();
            for rec in &days[&c.cluster_id] {
                let first = labeler.first_hour_of(rec.date);
                for (h, v) in rec.hours.iter().enumerate() {
                    let start = labeler.hour_start_utc(first + h as i64);
                    for k in 0..TICKS_PER_HOUR {
                        let ts = start + Duration::seconds(k as i64 * SAMPLE_SECONDS);
                        for pd in &c.pds {
                            let s = pd.usage_share;
                            let u_if = s * v.u_inflexible * (1.0 + spec.usage_noise * normal(&mut rng)).max(0.0);
                            let u_f = s * v.u_flexible * (1.0 + spec.usage_noise * normal(&mut rng)).max(0.0);
                            let p = pd.model().power(u_if + u_f) * (1.0 + spec.power_noise * normal(&mut rng)).max(0.0);
                            out.push(UsageSample {
                                timestamp: ts,
                                pd_id: pd.pd_id.clone(),
                                cluster_id: c.cluster_id.clone(),
                                tier: Tier::Inflexible,
                                cpu_usage: u_if,
                                cpu_reserved: s * v.r_inflexible,
                                power: Some(p),
                            });
                            out.push(UsageSample {
                                timestamp: ts,
                                pd_id: pd.pd_id.clone(),
                                cluster_id: c.cluster_id.clone(),
                                tier: Tier::Flexible,
                                cpu_usage: u_f,
                                cpu_reserved: s * v.r_flexible,
                                power: None,
                            });
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut samples: Vec<UsageSample> = per_cluster.into_iter().flatten().collect();
    samples.sort_by_key(|s| s.timestamp);
    SyntheticTelemetry { samples, topology: spec.topology(), truth: spec.ground_truth(), days }
}

/// True hourly intensities (kgCO2e/kWh) of a zone on a local date.
pub fn carbon_truth(spec: &FleetSpec, zone: &ZoneSpec, date: NaiveDate) -> Vec<f64> {
    let day = (date - spec.start_date).num_days();
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(spec.seed ^ str_seed(&zone.zone), TAG_CARBON), day as u64));
    let level = (1.0 + zone.daily_noise * normal(&mut rng)).max(0.1);
    (0..HOURS)
        .map(|h| {
            let phase = 2.0 * std::f64::consts::PI * (h as f64 - zone.peak_hour) / HOURS as f64;
            let g = zone.mean_g_per_kwh
                * (1.0 + zone.amplitude * phase.cos())
                * level
                * (1.0 + zone.hourly_noise * normal(&mut rng)).max(0.1);
            g / 1000.0
        })
        .collect()
}

/// Day-ahead forecast of a zone's intensities, kgCO2e/kWh.
pub fn carbon_forecast(spec: &FleetSpec, zone: &ZoneSpec, date: NaiveDate) -> Vec<f64> {
    let day = (date - spec.start_date).num_days();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        mix_seed(spec.seed ^ str_seed(&zone.zone), TAG_CARBON_FORECAST),
        day as u64,
    ));
    carbon_truth(spec, zone, date)
        .into_iter()
        .map(|e| e * (1.0 + zone.forecast_noise * normal(&mut rng)).max(0.1))
        .collect()
}

/// Carbon document for a planning date, issued at local noon of the day
/// before and covering two hours on each side of the day.
pub fn carbon_document(spec: &FleetSpec, zone: &ZoneSpec, date: NaiveDate) -> CarbonDocument {
    let labeler = spec.labeler();
    let first = labeler.first_hour_of(date);
    let prev = carbon_forecast(spec, zone, date - Duration::days(1));
    let cur = carbon_forecast(spec, zone, date);
    let next = carbon_forecast(spec, zone, date + Duration::days(1));
    let value = |h: i64| -> f64 {
        if h < 0 {
            prev[(h + 24) as usize]
        } else if h >= 24 {
            next[(h - 24) as usize]
        } else {
            cur[h as usize]
        }
    };
    let issued_at: DateTime<Utc> = labeler.hour_start_utc(first - 12);
    CarbonDocument {
        zone: Some(zone.zone.clone()),
        issued_at,
        forecast: (-2..26)
            .map(|h| CarbonPoint {
                datetime: labeler.hour_start_utc(first + h),
                carbon_intensity_g_per_kwh: value(h) * 1000.0,
            })
            .collect(),
    }
}

/// Random two-segment PDs whose breakpoints fall inside the PD's usage
/// range when the cluster runs near `mean_usage` GCU.
pub fn random_pds(cluster_id: &str, n: usize, mean_usage: f64, rng: &mut ChaCha8Rng) -> Vec<PdSpec> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.4)).collect();
    let total: f64 = raw.iter().sum();
    let mut shares: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let drift: f64 = shares.iter().sum::<f64>() - 1.0;
    shares[n - 1] -= drift;
    shares
        .into_iter()
        .enumerate()
        .map(|(k, share)| {
            let slope_low = rng.random_range(0.6..1.1);
            PdSpec {
                pd_id: format!("{cluster_id}-pd{k}"),
                usage_share: share,
                idle_kw: rng.random_range(30.0..70.0),
                breakpoint_gcu: share * mean_usage * rng.random_range(0.85..1.1),
                slope_low,
                slope_high: slope_low * rng.random_range(0.85..0.95),
            }
        })
        .collect()
}

/// Cosine inflexible reservation profile around `mean`.
pub fn diurnal_profile(mean: f64, amplitude: f64, peak_hour: f64) -> Vec<f64> {
    (0..HOURS)
        .map(|h| {
            let phase = 2.0 * std::f64::consts::PI * (h as f64 - peak_hour) / HOURS as f64;
            mean * (1.0 + amplitude * phase.cos())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClusterTemplate {
    pub capacity: f64,
    pub inflexible_mean: f64,
    pub diurnal_amplitude: f64,
    /// Local hour of the inflexible peak.
    pub peak_hour: f64,
    /// Relative spread of the inflexible mean across clusters.
    pub level_spread: f64,
    pub flexible_share: f64,
    pub daily_noise: f64,
    pub hourly_noise: f64,
    pub weekly_factors: Vec<f64>,
    pub n_pds: usize,
    pub reservation_error_quantile: Option<f64>,
}

impl Default for ClusterTemplate {
    fn default() -> Self {
        Self {
            capacity: 1000.0,
            inflexible_mean: 320.0,
            diurnal_amplitude: 0.2,
            peak_hour: 17.0,
            level_spread: 0.15,
            flexible_share: 0.3,
            daily_noise: 0.03,
            hourly_noise: 0.02,
            weekly_factors: vec![1.0, 1.02, 1.03, 1.03, 1.0, 0.93, 0.9],
            n_pds: 3,
            reservation_error_quantile: None,
        }
    }
}

impl ClusterTemplate {
    pub fn build(&self, cluster_id: &str, campus_id: &str, zone: &str, rng: &mut ChaCha8Rng) -> ClusterSpec {
        let load = ClusterTraceSpec {
            cluster_id: cluster_id.into(),
            inflexible_profile: diurnal_profile(self.inflexible_mean, self.diurnal_amplitude, self.peak_hour),
            weekly_factors: self.weekly_factors.clone(),
            flexible_share: self.flexible_share,
            capacity: self.capacity,
            daily_noise: self.daily_noise,
            hourly_noise: self.hourly_noise,
            ..Default::default()
        };
        let f_if = 0.5 * (load.inflexible_usage_fraction.0 + load.inflexible_usage_fraction.1);
        let f_f = 0.5 * (load.flexible_usage_fraction.0 + load.flexible_usage_fraction.1);
        let mean_usage = self.inflexible_mean * f_if + load.flexible_volume(self.inflexible_mean) * f_f;
        ClusterSpec {
            cluster_id: cluster_id.into(),
            campus_id: campus_id.into(),
            grid_zone: zone.into(),
            capacity: self.capacity,
            power_cap_usage: 0.9 * self.capacity,
            pds: random_pds(cluster_id, self.n_pds, mean_usage, rng),
            load,
            reservation_error_quantile: self.reservation_error_quantile,
        }
    }
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date")
}

/// Fleet of `n` clusters built from one template, spread over `zones`.
pub fn template_fleet(n: usize, days: u64, seed: u64, template: &ClusterTemplate, zones: Vec<ZoneSpec>) -> FleetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF1EE7));
    let clusters = (0..n)
        .map(|i| {
            let zone = &zones[i % zones.len()].zone;
            let mut t = template.clone();
            if t.level_spread > 0.0 {
                t.inflexible_mean *= rng.random_range(1.0 - t.level_spread..1.0 + t.level_spread);
            }
            t.build(&format!("c{i:02}"), "campus-a", zone, &mut rng)
        })
        .collect();
    FleetSpec {
        seed,
        start_date: default_start(),
        days,
        utc_offset_hours: -8,
        usage_noise: 0.0,
        power_noise: 0.0,
        clusters,
        zones,
        campuses: Vec::new(),
    }
}

/// Default campus: 20 clusters, 30% flexible share, two sinusoidal zones,
/// no campus contract.
pub fn default_campus(days: u64, seed: u64) -> FleetSpec {
    let zones = vec![
        ZoneSpec { zone: "grid-west".into(), peak_hour: 19.0, ..Default::default() },
        ZoneSpec { zone: "grid-east".into(), peak_hour: 18.0, mean_g_per_kwh: 450.0, ..Default::default() },
    ];
    template_fleet(20, days, seed, &ClusterTemplate::default(), zones)
}

/// Archetype clusters: `x` and `y` plan with reservation error quantiles of
/// 0.18 and 0.33; `z` runs close to capacity with a small flexible share.
pub fn cluster_archetypes() -> Vec<(&'static str, ClusterTemplate)> {
    vec![
        ("x", ClusterTemplate { flexible_share: 0.4, reservation_error_quantile: Some(0.18), ..Default::default() }),
        ("y", ClusterTemplate { flexible_share: 0.35, reservation_error_quantile: Some(0.33), ..Default::default() }),
        (
            "z",
            ClusterTemplate {
                inflexible_mean: 830.0,
                diurnal_amplitude: 0.02,
                level_spread: 0.01,
                flexible_share: 0.06,
                weekly_factors: vec![1.0; 7],
                reservation_error_quantile: Some(0.12),
                ..Default::default()
            },
        ),
    ]
}

/// Single-zone fleet of `n` copies of an archetype.
pub fn archetype_fleet(name: &str, n: usize, days: u64, seed: u64) -> Option<FleetSpec> {
    let (_, t) = cluster_archetypes().into_iter().find(|(k, _)| *k == name)?;
    let mut fleet =
        template_fleet(n, days, seed, &t, vec![ZoneSpec { zone: "grid-west".into(), ..Default::default() }]);
    for c in &mut fleet.clusters {
        c.cluster_id = format!("{name}-{}", c.cluster_id);
        c.load.cluster_id = c.cluster_id.clone();
    }
    Some(fleet)
}

/// PD fleet for power-model checks: `n_clusters` clusters of `pds_each`
/// PDs with 1% power noise.
pub fn pd_fleet(n_clusters: usize, pds_each: usize, days: u64, seed: u64) -> FleetSpec {
    let t = ClusterTemplate { n_pds: pds_each, diurnal_amplitude: 0.3, hourly_noise: 0.05, ..Default::default() };
    let mut f = template_fleet(n_clusters, days, seed, &t, vec![ZoneSpec::default()]);
    f.power_noise = 0.01;
    f.usage_noise = 0.03;
    f
}

/// Files written by [`write_fixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixturePaths {
    pub telemetry: PathBuf,
    pub topology: PathBuf,
    pub carbon: PathBuf,
    pub ground_truth: PathBuf,
    pub fleet: PathBuf,
    /// Job trace (JSONL) over every telemetry day plus the planning day,
    /// which is trace day `days`.
    pub trace: PathBuf,
    /// Run config pointing at the files above.
    pub config: PathBuf,
    /// First date without telemetry, the natural planning date.
    pub planning_date: NaiveDate,
}

/// Writes telemetry, topology, carbon documents (one per zone for every
/// day through the planning date), the ground-truth sidecar, the fleet spec
/// and a matching run config into `dir`.
pub fn write_fixture(spec: &FleetSpec, dir: &Path) -> std::io::Result<FixturePaths> {
    let io = |e: String| std::io::Error::other(e);
    std::fs::create_dir_all(dir)?;
    let t = generate_telemetry(spec);
    let telemetry = dir.join("telemetry.csv");
    let f = std::io::BufWriter::new(std::fs::File::create(&telemetry)?);
    crate::telemetry::write_samples(f, &t.samples).map_err(|e| io(e.to_string()))?;
    let topology = dir.join("topology.json");
    std::fs::write(&topology, serde_json::to_string_pretty(&t.topology)? + "\n")?;
    let ground_truth = dir.join("ground_truth.json");
    std::fs::write(&ground_truth, serde_json::to_string_pretty(&t.truth)? + "\n")?;
    let fleet = dir.join("fleet.toml");
    std::fs::write(&fleet, spec.to_toml())?;
    let mut jobs = BTreeMap::new();
    for (i, c) in spec.clusters.iter().enumerate() {
        let j = crate::simulator::generate_cluster_trace(&c.trace_spec(), spec.days + 1, mix_seed(spec.seed, i as u64))
            .map_err(|e| io(e.to_string()))?;
        jobs.insert(c.cluster_id.clone(), j);
    }
    let trace = dir.join("trace.jsonl");
    let f = std::io::BufWriter::new(std::fs::File::create(&trace)?);
    crate::simulator::write_trace(f, &jobs).map_err(|e| io(e.to_string()))?;
    let carbon = dir.join("carbon");
    std::fs::create_dir_all(&carbon)?;
    let planning_date = spec.date_of_day(spec.days);
    for z in &spec.zones {
        for d in 1..=spec.days {
            let doc = carbon_document(spec, z, spec.date_of_day(d));
            let f = crate::carbon::parse_carbon_document(doc).map_err(|e| io(e.to_string()))?;
            crate::carbon::write_document(&carbon, &f).map_err(|e| io(e.to_string()))?;
        }
    }
    let config = dir.join("config.toml");
    let run = crate::config::RunConfig {
        seed: spec.seed,
        utc_offset_hours: spec.utc_offset_hours,
        paths: crate::config::PathsConfig {
            telemetry: "telemetry.csv".into(),
            topology: "topology.json".into(),
            carbon: "carbon".into(),
            output: "runs".into(),
            fleet: Some("fleet.toml".into()),
        },
        ..Default::default()
    };
    std::fs::write(&config, run.to_toml())?;
    Ok(FixturePaths { telemetry, topology, carbon, ground_truth, fleet, trace, config, planning_date })
}
