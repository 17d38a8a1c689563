//! Randomized cluster-day experiment: every cluster-day flips a seeded coin
//! between a planned VCC (treatment) and full capacity (control). Treated
//! days are also replayed without shaping from the same state to give a
//! paired counterfactual.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::trace::{generate_cluster_trace, jobs_of_day};
use super::{run_day, top_carbon_hours, ClusterState, SimError, SimulationReport};
use crate::forecasting::{DayRecord, ForecastConfig, RollingForecaster, HOURS};
use crate::optimizer::PlannerConfig;
use crate::synthetic::{carbon_forecast, carbon_truth, mix_seed, ClusterSpec, FleetSpec};
use crate::vcc::{check_slo, plan_day, ClusterCandidate, PlanRequest, SloState, DEFAULT_NEAR_LIMIT_FRACTION};

pub const MIN_DAYS: u64 = 14;
pub const MIN_CLUSTERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Days under randomization, after the warm-up.
    pub days: u64,
    /// Unshaped days that seed the forecasters.
    pub warmup_days: u64,
    pub seed: u64,
    /// Taken from the top-level run config when loaded from a file.
    #[serde(skip)]
    pub planner: PlannerConfig,
    #[serde(skip)]
    pub forecast: ForecastConfig,
    pub top_k: usize,
    pub treatment_probability: f64,
    pub slo_threshold: f64,
    pub confidence: f64,
    /// When false, treated days also run under capacity curves.
    pub shaping_enabled: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            days: 60,
            warmup_days: 28,
            seed: 7,
            planner: PlannerConfig::default(),
            forecast: ForecastConfig::default(),
            top_k: 3,
            treatment_probability: 0.5,
            slo_threshold: DEFAULT_NEAR_LIMIT_FRACTION,
            confidence: 0.95,
            shaping_enabled: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Experiment(m.to_string()));
        if self.days < MIN_DAYS {
            return bad("the experiment needs at least 14 days");
        }
        if self.warmup_days < 14 {
            return bad("warm-up needs at least 14 days");
        }
        if !(0.0..=1.0).contains(&self.treatment_probability) {
            return bad("treatment_probability must lie in [0, 1]");
        }
        if self.top_k == 0 || self.top_k > HOURS {
            return bad("top_k must lie in 1..=24");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        self.planner.validate().map_err(|e| SimError::Experiment(e.to_string()))
    }
}

/// Mean with a two-sided t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl MeanInterval {
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }

    fn empty() -> Self {
        Self { mean: f64::NAN, lower: f64::NAN, upper: f64::NAN, n: 0 }
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

fn t_quantile(df: f64, confidence: f64) -> f64 {
    let p = 0.5 + confidence / 2.0;
    if !df.is_finite() || df <= 0.0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(p)).unwrap_or(f64::NAN)
}

/// One-sample t interval for the mean of `v`.
pub fn mean_interval(v: &[f64], confidence: f64) -> MeanInterval {
    if v.is_empty() {
        return MeanInterval::empty();
    }
    let (m, var) = mean_var(v);
    let n = v.len();
    let half = if n > 1 { t_quantile(n as f64 - 1.0, confidence) * (var / n as f64).sqrt() } else { f64::NAN };
    MeanInterval { mean: m, lower: m - half, upper: m + half, n }
}

/// Welch interval for `mean(a) - mean(b)`.
pub fn welch_interval(a: &[f64], b: &[f64], confidence: f64) -> MeanInterval {
    if a.len() < 2 || b.len() < 2 {
        return MeanInterval::empty();
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    let d = ma - mb;
    if se == 0.0 {
        return MeanInterval { mean: d, lower: d, upper: d, n: a.len() + b.len() };
    }
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let half = t_quantile(df, confidence) * se;
    MeanInterval { mean: d, lower: d - half, upper: d + half, n: a.len() + b.len() }
}

/// Paired comparison of a treated day with its unshaped replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedImpact {
    /// Percent drop of power over the top-carbon hours, simulated.
    pub realized_drop_pct: f64,
    /// The same drop predicted from the usage change through the true
    /// power sensitivity at the unshaped operating point.
    pub linearized_drop_pct: f64,
    /// Percent drop of flexible usage over the top-carbon hours.
    pub flexible_drop_pct: f64,
    pub emissions_delta_kg: f64,
    pub flexible_completion_delta_gcu_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDay {
    pub cluster_id: String,
    pub day: u64,
    pub date: NaiveDate,
    pub treated: bool,
    pub shaped: bool,
    pub fallback: Option<String>,
    pub vcc: Vec<f64>,
    /// Tick-averaged hourly reservations, both tiers.
    pub reservations: Vec<f64>,
    pub vcc_total: f64,
    pub reservation_demand: f64,
    pub realized_reservations: f64,
    pub mean_power_kw: f64,
    /// Hourly power divided by the day's mean.
    pub normalized_power: Vec<f64>,
    pub top_hours: Vec<usize>,
    pub emissions_kg: f64,
    pub late_completions: usize,
    pub overdue_pending: usize,
    pub flexible_gcu_hours_completed: f64,
    pub paired: Option<PairedImpact>,
}

impl ClusterDay {
    pub fn top_normalized_power(&self) -> f64 {
        self.top_hours.iter().map(|&h| self.normalized_power[h]).sum::<f64>() / self.top_hours.len() as f64
    }

    pub fn capacity_sufficient(&self) -> bool {
        self.vcc_total + 1e-9 >= self.reservation_demand
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourComparison {
    pub hour: usize,
    pub treated: MeanInterval,
    pub control: MeanInterval,
    pub difference: MeanInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub clusters: usize,
    pub days: u64,
    pub cluster_days: usize,
    pub treated_days: usize,
    pub shaped_days: usize,
    pub fallback_days: usize,
    /// Normalized power per hour of day, treated versus control.
    pub hourly: Vec<HourComparison>,
    /// Treated minus control normalized power over each day's top-carbon
    /// hours.
    pub top_carbon_difference: MeanInterval,
    pub top_carbon_drop_pct: f64,
    /// Shaped minus unshaped emissions on treated days, paired.
    pub emissions_delta_kg: MeanInterval,
    pub realized_drop_pct: MeanInterval,
    pub linearized_drop_pct: MeanInterval,
    pub flexible_drop_pct: MeanInterval,
    /// Total VCC over realized reservations on shaped days.
    pub vcc_over_demand: f64,
    /// Late flexible completions on days whose VCC covered demand.
    pub late_with_sufficient_capacity: usize,
    pub late_total: usize,
    pub overdue_at_end: usize,
    pub records: Vec<ClusterDay>,
}

impl ExperimentSummary {
    /// Per-hour comparison as CSV.
    pub fn hourly_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "hour",
            "treated_mean",
            "treated_lower",
            "treated_upper",
            "control_mean",
            "control_lower",
            "control_upper",
            "difference",
            "difference_lower",
            "difference_upper",
        ])?;
        for c in &self.hourly {
            let vals = [
                c.treated.mean,
                c.treated.lower,
                c.treated.upper,
                c.control.mean,
                c.control.lower,
                c.control.upper,
                c.difference.mean,
                c.difference.lower,
                c.difference.upper,
            ];
            let mut rec = vec![c.hour.to_string()];
            rec.extend(vals.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Replaces the reservation error history with a constant so its quantile
/// is exactly `q`.
pub fn pin_reservation_quantile(f: &mut RollingForecaster, q: f64) {
    let h = &mut f.reservation_errors;
    h.errors.clear();
    for _ in 0..h.capacity.max(crate::forecasting::MIN_ERRORS) {
        h.push_error(q);
    }
}

fn treated(seed: u64, cluster: usize, day: u64, p: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, cluster as u64 + 1), day));
    rng.random::<f64>() < p
}

fn day_record(date: NaiveDate, r: &SimulationReport) -> DayRecord {
    DayRecord { date, hours: r.hourly_values() }
}

fn paired_impact(c: &ClusterSpec, shaped: &SimulationReport, base: &SimulationReport, top: &[usize]) -> PairedImpact {
    let power = c.power();
    let sum =
        |r: &SimulationReport, f: &dyn Fn(&super::HourRecord) -> f64| top.iter().map(|&h| f(&r.hours[h])).sum::<f64>();
    let p0 = sum(base, &|h| h.power_kw);
    let p1 = sum(shaped, &|h| h.power_kw);
    let f0 = sum(base, &|h| h.u_flexible);
    let f1 = sum(shaped, &|h| h.u_flexible);
    let mut lin = 0.0;
    let mut pow0 = 0.0;
    for &h in top {
        let u0 = base.hours[h].u_inflexible + base.hours[h].u_flexible;
        let u1 = shaped.hours[h].u_inflexible + shaped.hours[h].u_flexible;
        lin += power.sensitivity(u0) * (u0 - u1);
        pow0 += power.power(u0);
    }
    let pct = |num: f64, den: f64| if den > 0.0 { 100.0 * num / den } else { 0.0 };
    PairedImpact {
        realized_drop_pct: pct(p0 - p1, p0),
        linearized_drop_pct: pct(lin, pow0),
        flexible_drop_pct: pct(f0 - f1, f0),
        emissions_delta_kg: shaped.total_emissions_kg - base.total_emissions_kg,
        flexible_completion_delta_gcu_hours: shaped.flexible_gcu_hours_completed - base.flexible_gcu_hours_completed,
    }
}

fn run_cluster(
    fleet: &FleetSpec,
    index: usize,
    c: &ClusterSpec,
    config: &ExperimentConfig,
) -> Result<(Vec<ClusterDay>, usize), SimError> {
    let total = config.warmup_days + config.days;
    let jobs = generate_cluster_trace(&c.trace_spec(), total, mix_seed(fleet.seed, index as u64))?;
    let zone = fleet
        .zone(&c.grid_zone)
        .ok_or_else(|| SimError::Experiment(format!("{}: unknown zone {}", c.cluster_id, c.grid_zone)))?;
    let power = c.power();
    let capacity = vec![c.capacity; HOURS];
    let mut state = ClusterState::new(c.cluster_id.clone());
    let mut forecaster = RollingForecaster::new(c.cluster_id.clone(), config.forecast);
    let mut slo: BTreeMap<String, SloState> = BTreeMap::new();
    slo.insert(c.cluster_id.clone(), SloState::new(c.cluster_id.clone()));
    let mut out = Vec::new();

    for d in 0..total {
        let date = fleet.date_of_day(d);
        let eta = carbon_truth(fleet, zone, date);
        let day_jobs = jobs_of_day(&jobs, d);
        if d < config.warmup_days {
            let r = run_day(&mut state, &capacity, day_jobs, &eta, &power);
            forecaster.observe(day_record(date, &r));
            continue;
        }
        let is_treated = treated(config.seed, index, d, config.treatment_probability);
        let mut curve = None;
        let mut fallback = None;
        if is_treated && config.shaping_enabled {
            if let Some(q) = c.reservation_error_quantile {
                pin_reservation_quantile(&mut forecaster, q);
            }
            let request = PlanRequest {
                date,
                run_id: format!("experiment-{}", config.seed),
                clusters: vec![ClusterCandidate {
                    cluster_id: c.cluster_id.clone(),
                    campus_id: c.campus_id.clone(),
                    grid_zone: c.grid_zone.clone(),
                    machine_capacity: c.capacity,
                    power_cap_usage: c.power_cap_usage,
                    forecast: forecaster.forecast().map_err(|e| e.to_string()),
                    power: Ok(power.clone()),
                }],
                campus_limits: BTreeMap::new(),
                carbon: BTreeMap::from([(c.grid_zone.clone(), carbon_forecast(fleet, zone, date))]),
            };
            let plan = plan_day(&request, &config.planner, &slo).map_err(|e| SimError::Experiment(e.to_string()))?;
            let cv = plan.curve(&c.cluster_id).cloned().expect("every cluster gets a curve");
            if let Some(reason) = &cv.reason {
                fallback = Some(reason.to_string());
            }
            curve = Some(cv);
        }
        let shaped = curve.as_ref().is_some_and(|cv| cv.is_shaped());
        let vcc = curve.as_ref().map_or(capacity.clone(), |cv| cv.vcc.clone());
        let top = top_carbon_hours(&eta, config.top_k);

        let baseline = shaped.then(|| {
            let mut s = state.clone();
            run_day(&mut s, &capacity, day_jobs, &eta, &power)
        });
        let r = run_day(&mut state, &vcc, day_jobs, &eta, &power);
        let paired = baseline.as_ref().map(|b| paired_impact(c, &r, b, &top));
        if let Some(cv) = &curve {
            let s = &slo[&c.cluster_id];
            let next = check_slo(r.total_reservations(), cv, s, config.slo_threshold);
            slo.insert(c.cluster_id.clone(), next);
        }
        forecaster.observe(day_record(date, &r));

        let mean_power = r.mean_power();
        out.push(ClusterDay {
            cluster_id: c.cluster_id.clone(),
            day: d,
            date,
            treated: is_treated,
            shaped,
            fallback,
            vcc_total: vcc.iter().sum(),
            reservations: r.hours.iter().map(|h| h.r_inflexible + h.r_flexible).collect(),
            vcc,
            reservation_demand: r.arriving_reservation_volume,
            realized_reservations: r.total_reservations(),
            mean_power_kw: mean_power,
            normalized_power: r.hours.iter().map(|h| h.power_kw / mean_power).collect(),
            top_hours: top,
            emissions_kg: r.total_emissions_kg,
            late_completions: r.late_completions,
            overdue_pending: r.overdue_pending,
            flexible_gcu_hours_completed: r.flexible_gcu_hours_completed,
            paired,
        });
    }
    let overdue = out.last().map_or(0, |d| d.overdue_pending);
    Ok((out, overdue))
}

/// Runs the randomized experiment over every cluster of `fleet`. Clusters
/// are simulated independently and in parallel; campus contracts are not
/// applied.
pub fn run_experiment(fleet: &FleetSpec, config: &ExperimentConfig) -> Result<ExperimentSummary, SimError> {
    config.validate()?;
    fleet.validate().map_err(|e| SimError::Experiment(e.to_string()))?;
    if fleet.clusters.len() < MIN_CLUSTERS {
        return Err(SimError::Experiment(format!(
            "the experiment needs at least {MIN_CLUSTERS} clusters, fleet has {}",
            fleet.clusters.len()
        )));
    }
    let per_cluster: Vec<(Vec<ClusterDay>, usize)> = fleet
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| run_cluster(fleet, i, c, config))
        .collect::<Result<_, _>>()?;
    let overdue_at_end = per_cluster.iter().map(|(_, o)| o).sum();
    let records: Vec<ClusterDay> = per_cluster.into_iter().flat_map(|(r, _)| r).collect();
    Ok(summarize(fleet.clusters.len(), config, records, overdue_at_end))
}

fn summarize(
    clusters: usize,
    config: &ExperimentConfig,
    records: Vec<ClusterDay>,
    overdue_at_end: usize,
) -> ExperimentSummary {
    let conf = config.confidence;
    let (treated, control): (Vec<&ClusterDay>, Vec<&ClusterDay>) = records.iter().partition(|r| r.treated);
    let hourly = (0..HOURS)
        .map(|h| {
            let t: Vec<f64> = treated.iter().map(|r| r.normalized_power[h]).collect();
            let c: Vec<f64> = control.iter().map(|r| r.normalized_power[h]).collect();
            HourComparison {
                hour: h,
                treated: mean_interval(&t, conf),
                control: mean_interval(&c, conf),
                difference: welch_interval(&t, &c, conf),
            }
        })
        .collect();
    let t_top: Vec<f64> = treated.iter().map(|r| r.top_normalized_power()).collect();
    let c_top: Vec<f64> = control.iter().map(|r| r.top_normalized_power()).collect();
    let top_carbon_difference = welch_interval(&t_top, &c_top, conf);
    let control_top = mean_interval(&c_top, conf).mean;
    let paired: Vec<&PairedImpact> = records.iter().filter_map(|r| r.paired.as_ref()).collect();
    let col = |f: fn(&PairedImpact) -> f64| -> Vec<f64> { paired.iter().map(|p| f(p)).collect() };
    let shaped: Vec<&ClusterDay> = records.iter().filter(|r| r.shaped).collect();
    let vcc: f64 = shaped.iter().map(|r| r.vcc_total).sum();
    let demand: f64 = shaped.iter().map(|r| r.realized_reservations).sum();
    ExperimentSummary {
        clusters,
        days: config.days,
        cluster_days: records.len(),
        treated_days: treated.len(),
        shaped_days: shaped.len(),
        fallback_days: treated.len() - shaped.len(),
        hourly,
        top_carbon_difference,
        top_carbon_drop_pct: -100.0 * top_carbon_difference.mean / control_top,
        emissions_delta_kg: mean_interval(&col(|p| p.emissions_delta_kg), conf),
        realized_drop_pct: mean_interval(&col(|p| p.realized_drop_pct), conf),
        linearized_drop_pct: mean_interval(&col(|p| p.linearized_drop_pct), conf),
        flexible_drop_pct: mean_interval(&col(|p| p.flexible_drop_pct), conf),
        vcc_over_demand: if demand > 0.0 { vcc / demand } else { f64::NAN },
        late_with_sufficient_capacity: records
            .iter()
            .filter(|r| r.capacity_sufficient())
            .map(|r| r.late_completions)
            .sum(),
        late_total: records.iter().map(|r| r.late_completions).sum(),
        overdue_at_end,
        records,
    }
}
