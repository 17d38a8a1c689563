//! Virtual capacity curves: turning optimized flexible-usage shifts into
//! hourly reservation limits, fallbacks, and the SLO feedback loop that
//! pauses shaping for a week after sustained pressure.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::forecasting::{DayAheadForecast, HOURS};
use crate::optimizer::{
    build_problem, solve, ClusterPlanInput, ClusterStatus, FallbackReason, ObjectiveTerms, OptimizationResult,
    OptimizerError, PlanInputs, PlannerConfig,
};
use crate::power_model::ClusterPowerSensitivity;

/// Relative tolerance on `sum VCC = theta` for shaped curves.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_NEAR_LIMIT_FRACTION: f64 = 0.98;
pub const NEAR_LIMIT_DAYS: u32 = 2;
pub const DISABLE_DAYS: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    Shaped,
    FallbackCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VccCurve {
    pub cluster_id: String,
    pub date: NaiveDate,
    #[serde(rename = "vcc_gcu")]
    pub vcc: Vec<f64>,
    pub mode: CurveMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FallbackReason>,
    pub provenance: String,
}

impl VccCurve {
    pub fn total(&self) -> f64 {
        self.vcc.iter().sum()
    }

    pub fn is_shaped(&self) -> bool {
        self.mode == CurveMode::Shaped
    }

    pub fn at_hour(&self, h: usize) -> f64 {
        self.vcc[h]
    }
}

pub fn fallback_curve(
    cluster_id: &str,
    date: NaiveDate,
    capacity: f64,
    reason: FallbackReason,
    provenance: &str,
) -> VccCurve {
    VccCurve {
        cluster_id: cluster_id.to_string(),
        date,
        vcc: vec![capacity; HOURS],
        mode: CurveMode::FallbackCapacity,
        reason: Some(reason),
        provenance: provenance.to_string(),
    }
}

/// `VCC(h) = (u_if(h) + (1 + delta(h)) * tau_u / 24) * ratio(h)`, checked
/// against the daily requirement and machine capacity.
pub fn compute_vcc(
    delta: &[f64],
    forecast: &DayAheadForecast,
    capacity: f64,
    provenance: &str,
) -> Result<VccCurve, FallbackReason> {
    if delta.len() != HOURS {
        return Err(FallbackReason::IdentityViolation(format!("delta has {} hours", delta.len())));
    }
    let k = forecast.tau_u / HOURS as f64;
    let vcc: Vec<f64> =
        (0..HOURS).map(|h| (forecast.u_inflexible_hat[h] + (1.0 + delta[h]) * k) * forecast.ratio_curve[h]).collect();
    let total: f64 = vcc.iter().sum();
    let rel = (total - forecast.theta).abs() / forecast.theta.abs().max(f64::MIN_POSITIVE);
    if rel > IDENTITY_TOLERANCE {
        return Err(FallbackReason::IdentityViolation(format!("sum {total:.6} vs requirement {:.6}", forecast.theta)));
    }
    if let Some(h) = (0..HOURS).find(|&h| vcc[h] > capacity * (1.0 + 1e-9)) {
        return Err(FallbackReason::IdentityViolation(format!("hour {h}: {:.6} above capacity {capacity}", vcc[h])));
    }
    Ok(VccCurve {
        cluster_id: forecast.cluster_id.clone(),
        date: forecast.date,
        vcc: vcc.into_iter().map(|v| v.min(capacity)).collect(),
        mode: CurveMode::Shaped,
        reason: None,
        provenance: provenance.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SloState {
    pub cluster_id: String,
    pub consecutive_near_limit_days: u32,
    /// Last day (inclusive) on which shaping stays disabled.
    pub shaping_disabled_until: Option<NaiveDate>,
}

impl SloState {
    pub fn new(cluster_id: impl Into<String>) -> Self {
        Self { cluster_id: cluster_id.into(), ..Default::default() }
    }

    pub fn is_disabled(&self, date: NaiveDate) -> bool {
        self.shaping_disabled_until.is_some_and(|until| date <= until)
    }
}

/// Advances the SLO state with the realized daily reservations of a day.
/// Only days under a shaped curve count toward the near-limit streak.
pub fn check_slo(actual_reservations: f64, curve: &VccCurve, state: &SloState, threshold_fraction: f64) -> SloState {
    let mut next = state.clone();
    if !curve.is_shaped() {
        next.consecutive_near_limit_days = 0;
        return next;
    }
    if actual_reservations >= threshold_fraction * curve.total() {
        next.consecutive_near_limit_days += 1;
        if next.consecutive_near_limit_days >= NEAR_LIMIT_DAYS {
            next.shaping_disabled_until = curve.date.checked_add_days(Days::new(DISABLE_DAYS));
            next.consecutive_near_limit_days = 0;
            log::info!("{}: near VCC limit two days running, shaping paused for a week", curve.cluster_id);
        }
    } else {
        next.consecutive_near_limit_days = 0;
    }
    next
}

/// Everything known about one cluster at planning time. Missing forecasts
/// or power models carry the reason they are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCandidate {
    pub cluster_id: String,
    pub campus_id: String,
    pub grid_zone: String,
    pub machine_capacity: f64,
    pub power_cap_usage: f64,
    pub forecast: Result<DayAheadForecast, String>,
    pub power: Result<ClusterPowerSensitivity, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub date: NaiveDate,
    pub run_id: String,
    pub clusters: Vec<ClusterCandidate>,
    pub campus_limits: BTreeMap<String, f64>,
    pub carbon: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub cluster_id: String,
    #[serde(flatten)]
    pub status: ClusterStatus,
    pub delta: Option<Vec<f64>>,
    pub y_kw: Option<f64>,
    pub vcc_gcu: Vec<f64>,
    pub eta_used: Option<Vec<f64>>,
    pub objective_terms: Option<ObjectiveTerms>,
}

/// Full plan for a fleet and date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPlan {
    pub date: NaiveDate,
    pub run_id: String,
    pub planner: PlannerConfig,
    pub objective: f64,
    pub contract_slack_kw: BTreeMap<String, f64>,
    pub clusters: Vec<PlanEntry>,
    #[serde(skip)]
    pub curves: Vec<VccCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VccEntry {
    pub cluster_id: String,
    pub mode: CurveMode,
    pub vcc_gcu: Vec<f64>,
}

/// Distribution format: only what admission control needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VccOutput {
    pub date: NaiveDate,
    pub clusters: Vec<VccEntry>,
}

impl VccOutput {
    pub fn curve(&self, cluster_id: &str) -> Option<&VccEntry> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }
}

impl DayPlan {
    pub fn curve(&self, cluster_id: &str) -> Option<&VccCurve> {
        self.curves.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn shaped_count(&self) -> usize {
        self.clusters.iter().filter(|e| e.status.is_shaped()).count()
    }

    pub fn vcc_output(&self) -> VccOutput {
        VccOutput {
            date: self.date,
            clusters: self
                .curves
                .iter()
                .map(|c| VccEntry { cluster_id: c.cluster_id.clone(), mode: c.mode, vcc_gcu: c.vcc.clone() })
                .collect(),
        }
    }

    /// Rebuilds curves after deserializing a plan artifact.
    pub fn restore_curves(&mut self) {
        self.curves = self
            .clusters
            .iter()
            .map(|e| VccCurve {
                cluster_id: e.cluster_id.clone(),
                date: self.date,
                vcc: e.vcc_gcu.clone(),
                mode: if e.status.is_shaped() { CurveMode::Shaped } else { CurveMode::FallbackCapacity },
                reason: match &e.status {
                    ClusterStatus::Fallback { reason } => Some(reason.clone()),
                    ClusterStatus::Shaped => None,
                },
                provenance: self.run_id.clone(),
            })
            .collect();
    }
}

/// Plans one day for the whole fleet. Every cluster receives exactly one
/// curve; only an invalid planner config is an error.
pub fn plan_day(
    request: &PlanRequest,
    config: &PlannerConfig,
    slo: &BTreeMap<String, SloState>,
) -> Result<DayPlan, OptimizerError> {
    config.validate()?;
    let mut fallbacks: BTreeMap<String, FallbackReason> = BTreeMap::new();
    let mut inputs = PlanInputs {
        clusters: Vec::new(),
        campus_limits: request.campus_limits.clone(),
        carbon: request.carbon.clone(),
    };
    let mut by_id: BTreeMap<&str, &ClusterCandidate> = BTreeMap::new();
    for c in &request.clusters {
        by_id.insert(&c.cluster_id, c);
        if slo.get(&c.cluster_id).is_some_and(|s| s.is_disabled(request.date)) {
            fallbacks.insert(c.cluster_id.clone(), FallbackReason::SloDisabled);
            continue;
        }
        let (forecast, power) = match (&c.forecast, &c.power) {
            (Ok(f), Ok(p)) => (f, p),
            (Err(e), _) | (_, Err(e)) => {
                fallbacks.insert(c.cluster_id.clone(), FallbackReason::InsufficientData(e.clone()));
                continue;
            }
        };
        inputs.clusters.push(ClusterPlanInput {
            cluster_id: c.cluster_id.clone(),
            campus_id: c.campus_id.clone(),
            grid_zone: c.grid_zone.clone(),
            forecast: forecast.clone(),
            power: power.clone(),
            machine_capacity: c.machine_capacity,
            power_cap_usage: c.power_cap_usage,
        });
    }
    let problem = build_problem(&inputs, config)?;
    let result: OptimizationResult = solve(&problem);

    let mut entries = Vec::new();
    let mut curves = Vec::new();
    let mut objective = 0.0;
    for (id, c) in &by_id {
        let eta_used = request.carbon.get(&c.grid_zone).cloned();
        let outcome = result.outcome(id);
        let shaped = match (outcome, &c.forecast) {
            (Some(o), Ok(f)) if o.status.is_shaped() => {
                let delta = o.delta.as_deref().unwrap_or(&[]);
                match compute_vcc(delta, f, c.machine_capacity, &request.run_id) {
                    Ok(curve) => Some((curve, o)),
                    Err(reason) => {
                        log::warn!("{id}: {reason}");
                        fallbacks.insert(id.to_string(), reason);
                        None
                    }
                }
            }
            (Some(o), _) => {
                if let ClusterStatus::Fallback { reason } = &o.status {
                    fallbacks.entry(id.to_string()).or_insert_with(|| reason.clone());
                }
                None
            }
            (None, _) => None,
        };
        match shaped {
            Some((curve, o)) => {
                if let Some(t) = &o.terms {
                    objective += t.carbon_cost + t.peak_cost;
                }
                entries.push(PlanEntry {
                    cluster_id: id.to_string(),
                    status: ClusterStatus::Shaped,
                    delta: o.delta.clone(),
                    y_kw: o.peak_bound_kw,
                    vcc_gcu: curve.vcc.clone(),
                    eta_used,
                    objective_terms: o.terms,
                });
                curves.push(curve);
            }
            None => {
                let reason = fallbacks
                    .get(*id)
                    .cloned()
                    .unwrap_or_else(|| FallbackReason::Numerical("cluster missing from optimization".into()));
                let curve = fallback_curve(id, request.date, c.machine_capacity, reason.clone(), &request.run_id);
                entries.push(PlanEntry {
                    cluster_id: id.to_string(),
                    status: ClusterStatus::Fallback { reason },
                    delta: None,
                    y_kw: None,
                    vcc_gcu: curve.vcc.clone(),
                    eta_used,
                    objective_terms: None,
                });
                curves.push(curve);
            }
        }
    }
    let mut contract_slack_kw = result.contract_slack.clone();
    contract_slack_kw.retain(|_, v| *v > 0.0);
    objective += contract_slack_kw.values().map(|s| s * config.contract_penalty).sum::<f64>();
    Ok(DayPlan {
        date: request.date,
        run_id: request.run_id.clone(),
        planner: *config,
        objective,
        contract_slack_kw,
        clusters: entries,
        curves,
    })
}
