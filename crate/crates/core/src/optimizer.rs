//! Day-ahead carbon and peak-power optimization over flexible-usage shifts.
//!
//! For every shapeable cluster the decision variables are `delta(h)`, the
//! fractional deviation of hour `h`'s flexible usage from the uniform share
//! `tau_u / 24`, and `y`, a bound on the day's peak power. Power is
//! linearized at the nominal usage `u_if(h) + tau_u / 24`.
//!
//! The program minimizes
//! `lambda_e * sum eta(h) * (P(h) + pi(h) * delta(h) * tau_u / 24) + lambda_p * sum y`
//! subject to
//!
//! * `sum_h delta(h) = 0` (usage conservation)
//! * `sum_h delta(h) * ratio(h) = 0` (keeps `sum VCC = theta`)
//! * `delta(h) <= (u_pow - q_if(h)) * 24 / tau_u - 1` (power capping)
//! * `y >= P(h) + pi(h) * delta(h) * tau_u / 24`
//! * `sum_{c in campus} y_c <= L` (campus contract)
//! * `delta(h) <= (C / ratio(h) - u_if(h)) * 24 / tau_u - 1` (capacity)
//! * `delta(h) >= -1`
//!
//! Only the campus contract couples clusters, so the program splits into one
//! subproblem per contracted campus plus one per uncontracted cluster. Ties
//! are broken by a second solve that minimizes `sum |delta|` over the
//! optimal face.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecasting::{DayAheadForecast, HOURS};
use crate::lp::{self, LinearProgram, LpError, RowKind, SimplexOptions};
use crate::power_model::ClusterPowerSensitivity;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Cost of one kgCO2e.
    pub lambda_e: f64,
    /// Cost of one kW of daily peak.
    pub lambda_p: f64,
    /// Power-capping exceedance probability.
    pub gamma: f64,
    /// Relative optimality slack allowed by the tie-break solve.
    pub tolerance: f64,
    pub delta_lower: f64,
    /// Optional bound on `|delta(h) - delta(h-1)|`.
    pub delta_step_bound: Option<f64>,
    /// Shape clusters with no carbon forecast for peak power only, instead
    /// of falling back to capacity.
    pub shape_without_carbon: bool,
    /// Cost per kW of campus contract violation when the contract cannot be
    /// met.
    pub contract_penalty: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_p: 10.0,
            gamma: 0.03,
            tolerance: 1e-9,
            delta_lower: -1.0,
            delta_step_bound: None,
            shape_without_carbon: false,
            contract_penalty: 1e6,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if !(self.lambda_e >= 0.0 && self.lambda_p >= 0.0) {
            return bad("lambda_e and lambda_p must be non-negative");
        }
        if self.lambda_e == 0.0 && self.lambda_p == 0.0 {
            return bad("lambda_e and lambda_p cannot both be zero");
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return bad("gamma must lie in (0, 0.5)");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if !(self.delta_lower >= -1.0 && self.delta_lower <= 0.0) {
            return bad("delta_lower must lie in [-1, 0]");
        }
        if let Some(s) = self.delta_step_bound {
            if !(s > 0.0) {
                return bad("delta_step_bound must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FallbackReason {
    InsufficientData(String),
    NoFlexibleLoad,
    /// Predicted inflexible reservations already exhaust the requirement.
    RequirementExhausted,
    Infeasible(String),
    MissingCarbon,
    SloDisabled,
    Numerical(String),
    IdentityViolation(String),
}

impl std::fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Self::NoFlexibleLoad => write!(f, "no flexible load"),
            Self::RequirementExhausted => write!(f, "requirement exhausted by inflexible reservations"),
            Self::Infeasible(m) => write!(f, "infeasible: {m}"),
            Self::MissingCarbon => write!(f, "no carbon forecast"),
            Self::SloDisabled => write!(f, "shaping disabled after SLO pressure"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::IdentityViolation(m) => write!(f, "capacity identity violated: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClusterStatus {
    Shaped,
    Fallback { reason: FallbackReason },
}

impl ClusterStatus {
    pub fn is_shaped(&self) -> bool {
        matches!(self, Self::Shaped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPlanInput {
    pub cluster_id: String,
    pub campus_id: String,
    pub grid_zone: String,
    pub forecast: DayAheadForecast,
    pub power: ClusterPowerSensitivity,
    pub machine_capacity: f64,
    pub power_cap_usage: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanInputs {
    pub clusters: Vec<ClusterPlanInput>,
    /// Campus contract limits in kW.
    pub campus_limits: BTreeMap<String, f64>,
    /// Hourly kgCO2e/kWh per grid zone for the planning day.
    pub carbon: BTreeMap<String, Vec<f64>>,
}

/// One shapeable cluster's coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBlock {
    pub cluster_id: String,
    pub campus_id: String,
    pub eta: Vec<f64>,
    pub tau_u: f64,
    pub ratio: Vec<f64>,
    /// Power at nominal usage, kW.
    pub power: Vec<f64>,
    /// Power sensitivity at nominal usage, kW per GCU.
    pub sensitivity: Vec<f64>,
    /// Power-capping bound on delta.
    pub power_cap_bound: Vec<f64>,
    /// Machine-capacity bound on delta.
    pub capacity_bound: Vec<f64>,
    pub delta_lower: f64,
}

impl ClusterBlock {
    pub fn delta_upper(&self, h: usize) -> f64 {
        self.power_cap_bound[h].min(self.capacity_bound[h])
    }

    /// Objective coefficient of `delta(h)` before weighting by `lambda_e`.
    pub fn carbon_slope(&self, h: usize) -> f64 {
        self.eta[h] * self.sensitivity[h] * self.tau_u / HOURS as f64
    }

    pub fn hourly_power(&self, delta: &[f64]) -> Vec<f64> {
        (0..HOURS).map(|h| self.power[h] + self.sensitivity[h] * delta[h] * self.tau_u / HOURS as f64).collect()
    }

    /// Estimated emissions in kgCO2e for a given delta row.
    pub fn emissions(&self, delta: &[f64]) -> f64 {
        self.hourly_power(delta).iter().zip(&self.eta).map(|(p, e)| p * e).sum()
    }

    /// Checks constraints (a), (b), (c), (d), (f), (g) for one cluster.
    pub fn check(&self, delta: &[f64], y: f64, tol: f64) -> Result<(), String> {
        if delta.len() != HOURS {
            return Err(format!("delta has {} entries", delta.len()));
        }
        let s: f64 = delta.iter().sum();
        if s.abs() > tol {
            return Err(format!("sum delta = {s:e}"));
        }
        let scale = self.ratio.iter().fold(1.0f64, |m, r| m.max(r.abs()));
        let sr: f64 = delta.iter().zip(&self.ratio).map(|(d, r)| d * r).sum();
        if sr.abs() > tol * scale {
            return Err(format!("sum delta*ratio = {sr:e}"));
        }
        for h in 0..HOURS {
            let d = delta[h];
            if d > self.power_cap_bound[h] + tol {
                return Err(format!("hour {h}: power cap, delta {d} > {}", self.power_cap_bound[h]));
            }
            if d > self.capacity_bound[h] + tol {
                return Err(format!("hour {h}: capacity, delta {d} > {}", self.capacity_bound[h]));
            }
            if d < self.delta_lower - tol {
                return Err(format!("hour {h}: delta {d} below {}", self.delta_lower));
            }
        }
        let peak = self.hourly_power(delta).into_iter().fold(f64::MIN, f64::max);
        if y < peak - tol * peak.abs().max(1.0) {
            return Err(format!("peak bound {y} below hourly power {peak}"));
        }
        Ok(())
    }
}

/// Linear program description over a set of shapeable clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem {
    pub config: PlannerConfig,
    pub blocks: Vec<ClusterBlock>,
    /// Contract limits of campuses present in `blocks`.
    pub campus_limits: BTreeMap<String, f64>,
    /// Clusters removed before optimization.
    pub excluded: BTreeMap<String, FallbackReason>,
}

impl PlanProblem {
    pub fn n_variables(&self) -> usize {
        self.blocks.len() * (HOURS + 1)
    }

    pub fn n_equalities(&self) -> usize {
        self.blocks.len() * 2
    }

    pub fn n_inequalities(&self) -> usize {
        let steps = if self.config.delta_step_bound.is_some() { 2 * (HOURS - 1) } else { 0 };
        self.blocks.len() * (3 * HOURS + steps) + self.campus_limits.len()
    }
}

/// Builds the program, excluding clusters that cannot be shaped.
pub fn build_problem(inputs: &PlanInputs, config: &PlannerConfig) -> Result<PlanProblem, OptimizerError> {
    config.validate()?;
    let mut blocks = Vec::new();
    let mut excluded = BTreeMap::new();
    for c in &inputs.clusters {
        match build_block(c, inputs.carbon.get(&c.grid_zone), config) {
            Ok(b) => blocks.push(b),
            Err(reason) => {
                excluded.insert(c.cluster_id.clone(), reason);
            }
        }
    }
    blocks.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    let campus_limits = inputs
        .campus_limits
        .iter()
        .filter(|(campus, _)| blocks.iter().any(|b| &b.campus_id == *campus))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    Ok(PlanProblem { config: *config, blocks, campus_limits, excluded })
}

fn build_block(
    c: &ClusterPlanInput,
    eta: Option<&Vec<f64>>,
    config: &PlannerConfig,
) -> Result<ClusterBlock, FallbackReason> {
    let f = &c.forecast;
    let eta = match eta {
        Some(e) if e.len() == HOURS => e.clone(),
        _ if config.shape_without_carbon => vec![0.0; HOURS],
        _ => return Err(FallbackReason::MissingCarbon),
    };
    if !(f.tau_u > 0.0) {
        return Err(if f.alpha_clamped {
            FallbackReason::RequirementExhausted
        } else {
            FallbackReason::NoFlexibleLoad
        });
    }
    let k = f.tau_u / HOURS as f64;
    let nominal = f.nominal_usage();
    let power: Vec<f64> = nominal.iter().map(|&u| c.power.power(u)).collect();
    let sensitivity: Vec<f64> = nominal.iter().map(|&u| c.power.sensitivity(u)).collect();
    let power_cap_bound: Vec<f64> =
        f.inflexible_quantile_profile.iter().map(|q| (c.power_cap_usage - q) / k - 1.0).collect();
    let capacity_bound: Vec<f64> =
        (0..HOURS).map(|h| (c.machine_capacity / f.ratio_curve[h] - f.u_inflexible_hat[h]) / k - 1.0).collect();
    let block = ClusterBlock {
        cluster_id: c.cluster_id.clone(),
        campus_id: c.campus_id.clone(),
        eta,
        tau_u: f.tau_u,
        ratio: f.ratio_curve.clone(),
        power,
        sensitivity,
        power_cap_bound,
        capacity_bound,
        delta_lower: config.delta_lower,
    };
    for h in 0..HOURS {
        if block.power_cap_bound[h] < block.delta_lower {
            return Err(FallbackReason::Infeasible(format!("power cap below inflexible quantile at hour {h}")));
        }
        if block.capacity_bound[h] < block.delta_lower {
            return Err(FallbackReason::Infeasible(format!("inflexible reservations exceed capacity at hour {h}")));
        }
    }
    // conservation equalities must be reachable inside the box
    let mut probe = PlannerConfig { lambda_e: 0.0, lambda_p: 0.0, ..*config };
    probe.delta_step_bound = config.delta_step_bound;
    let sub = LpBuilder::new(std::slice::from_ref(&block), &BTreeMap::new(), &probe, false);
    match lp::solve(&sub.lp, &SimplexOptions::default()) {
        Ok(_) => Ok(block),
        Err(LpError::Infeasible) => Err(FallbackReason::Infeasible(
            "daily requirement cannot be met within capacity and power-cap bounds".into(),
        )),
        Err(e) => Err(FallbackReason::Numerical(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// Estimated emissions, kgCO2e.
    pub emissions_kg: f64,
    /// `lambda_e * emissions_kg`.
    pub carbon_cost: f64,
    /// `lambda_p * y`.
    pub peak_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub cluster_id: String,
    #[serde(flatten)]
    pub status: ClusterStatus,
    pub delta: Option<Vec<f64>>,
    pub peak_bound_kw: Option<f64>,
    pub terms: Option<ObjectiveTerms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// Sorted by cluster id.
    pub clusters: Vec<ClusterOutcome>,
    /// Total objective over shaped clusters, including contract penalties.
    pub objective: f64,
    /// Contract overrun in kW for campuses whose contract had to be relaxed.
    pub contract_slack: BTreeMap<String, f64>,
}

impl OptimizationResult {
    pub fn outcome(&self, cluster_id: &str) -> Option<&ClusterOutcome> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn delta(&self, cluster_id: &str) -> Option<&[f64]> {
        self.outcome(cluster_id).and_then(|c| c.delta.as_deref())
    }
}

/// Checks every constraint of `problem` at `result` within `tol`.
pub fn check_result(problem: &PlanProblem, result: &OptimizationResult, tol: f64) -> Result<(), String> {
    let mut campus_y: BTreeMap<&str, f64> = BTreeMap::new();
    for b in &problem.blocks {
        let o = result.outcome(&b.cluster_id).ok_or_else(|| format!("{} missing", b.cluster_id))?;
        if let (Some(d), Some(y)) = (&o.delta, o.peak_bound_kw) {
            b.check(d, y, tol).map_err(|e| format!("{}: {e}", b.cluster_id))?;
            *campus_y.entry(&b.campus_id).or_default() += y;
        }
    }
    for (campus, &limit) in &problem.campus_limits {
        let y = campus_y.get(campus.as_str()).copied().unwrap_or(0.0);
        let slack = result.contract_slack.get(campus).copied().unwrap_or(0.0);
        if y > limit + slack + tol * limit.max(1.0) {
            return Err(format!("campus {campus}: peak sum {y} exceeds contract {limit}"));
        }
    }
    Ok(())
}

/// Splits the problem into independent subproblems: one per contracted
/// campus, one per remaining cluster.
pub fn decompose_by_campus(problem: &PlanProblem) -> Vec<PlanProblem> {
    let mut groups: BTreeMap<String, Vec<ClusterBlock>> = BTreeMap::new();
    for b in &problem.blocks {
        let key = if problem.campus_limits.contains_key(&b.campus_id) {
            format!("campus:{}", b.campus_id)
        } else {
            format!("cluster:{}", b.cluster_id)
        };
        groups.entry(key).or_default().push(b.clone());
    }
    groups
        .into_values()
        .map(|blocks| {
            let campus_limits = problem
                .campus_limits
                .iter()
                .filter(|(c, _)| blocks.iter().any(|b| &b.campus_id == *c))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            PlanProblem { config: problem.config, blocks, campus_limits, excluded: BTreeMap::new() }
        })
        .collect()
}

/// Solves each independent subproblem in parallel and merges by cluster id.
pub fn solve(problem: &PlanProblem) -> OptimizationResult {
    let parts: Vec<OptimizationResult> = decompose_by_campus(problem).par_iter().map(solve_joint).collect();
    let mut merged = OptimizationResult { clusters: Vec::new(), objective: 0.0, contract_slack: BTreeMap::new() };
    for p in parts {
        merged.objective += p.objective;
        merged.clusters.extend(p.clusters);
        merged.contract_slack.extend(p.contract_slack);
    }
    append_excluded(&mut merged, problem);
    merged
}

/// Solves the whole problem as a single program.
pub fn solve_joint(problem: &PlanProblem) -> OptimizationResult {
    let mut result = match solve_blocks(problem, false) {
        Ok(r) => r,
        Err(LpError::Infeasible) if !problem.campus_limits.is_empty() => match solve_blocks(problem, true) {
            Ok(r) => {
                for (campus, slack) in &r.contract_slack {
                    log::warn!("campus {campus}: contract relaxed by {slack:.3} kW");
                }
                r
            }
            Err(e) => all_fallback(problem, &e),
        },
        Err(e) => all_fallback(problem, &e),
    };
    append_excluded(&mut result, problem);
    result
}

fn all_fallback(problem: &PlanProblem, e: &LpError) -> OptimizationResult {
    log::warn!("optimization failed for {} clusters: {e}", problem.blocks.len());
    let reason = match e {
        LpError::Infeasible => FallbackReason::Infeasible(e.to_string()),
        _ => FallbackReason::Numerical(e.to_string()),
    };
    OptimizationResult {
        clusters: problem
            .blocks
            .iter()
            .map(|b| ClusterOutcome {
                cluster_id: b.cluster_id.clone(),
                status: ClusterStatus::Fallback { reason: reason.clone() },
                delta: None,
                peak_bound_kw: None,
                terms: None,
            })
            .collect(),
        objective: 0.0,
        contract_slack: BTreeMap::new(),
    }
}

fn append_excluded(result: &mut OptimizationResult, problem: &PlanProblem) {
    for (id, reason) in &problem.excluded {
        if result.outcome(id).is_none() {
            result.clusters.push(ClusterOutcome {
                cluster_id: id.clone(),
                status: ClusterStatus::Fallback { reason: reason.clone() },
                delta: None,
                peak_bound_kw: None,
                terms: None,
            });
        }
    }
    result.clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
}

struct BlockVars {
    pos: Vec<usize>,
    neg: Vec<usize>,
    y: usize,
}

struct LpBuilder {
    lp: LinearProgram,
    vars: Vec<BlockVars>,
    slacks: Vec<(String, usize)>,
    constant: f64,
}

impl LpBuilder {
    fn new(
        blocks: &[ClusterBlock],
        campus_limits: &BTreeMap<String, f64>,
        config: &PlannerConfig,
        relax_contracts: bool,
    ) -> Self {
        let mut lp = LinearProgram::new();
        let mut vars = Vec::with_capacity(blocks.len());
        let mut constant = 0.0;
        let k_of = |b: &ClusterBlock| b.tau_u / HOURS as f64;
        for b in blocks {
            let mut pos = Vec::with_capacity(HOURS);
            let mut neg = Vec::with_capacity(HOURS);
            for h in 0..HOURS {
                let c = config.lambda_e * b.carbon_slope(h);
                let ub = b.delta_upper(h);
                pos.push(lp.add_var(c, 0.0, ub.max(0.0)));
                neg.push(lp.add_var(-c, (-ub).max(0.0), -b.delta_lower));
                constant += config.lambda_e * b.eta[h] * b.power[h];
            }
            let y = lp.add_var(config.lambda_p, 0.0, f64::INFINITY);
            let both = |coef: &dyn Fn(usize) -> f64| -> Vec<(usize, f64)> {
                (0..HOURS).flat_map(|h| [(pos[h], coef(h)), (neg[h], -coef(h))]).collect()
            };
            lp.add_row(both(&|_| 1.0), RowKind::Eq, 0.0);
            lp.add_row(both(&|h| b.ratio[h]), RowKind::Eq, 0.0);
            let k = k_of(b);
            for h in 0..HOURS {
                let s = b.sensitivity[h] * k;
                lp.add_row(vec![(y, 1.0), (pos[h], -s), (neg[h], s)], RowKind::Ge, b.power[h]);
            }
            if let Some(step) = config.delta_step_bound {
                for h in 1..HOURS {
                    let diff = vec![(pos[h], 1.0), (neg[h], -1.0), (pos[h - 1], -1.0), (neg[h - 1], 1.0)];
                    lp.add_row(diff.clone(), RowKind::Le, step);
                    lp.add_row(diff, RowKind::Ge, -step);
                }
            }
            vars.push(BlockVars { pos, neg, y });
        }
        let mut slacks = Vec::new();
        for (campus, &limit) in campus_limits {
            let mut coeffs: Vec<(usize, f64)> =
                blocks.iter().zip(&vars).filter(|(b, _)| &b.campus_id == campus).map(|(_, v)| (v.y, 1.0)).collect();
            if coeffs.is_empty() {
                continue;
            }
            if relax_contracts {
                let s = lp.add_var(config.contract_penalty, 0.0, f64::INFINITY);
                coeffs.push((s, -1.0));
                slacks.push((campus.clone(), s));
            }
            lp.add_row(coeffs, RowKind::Le, limit);
        }
        Self { lp, vars, slacks, constant }
    }
}

fn solve_blocks(problem: &PlanProblem, relax_contracts: bool) -> Result<OptimizationResult, LpError> {
    let config = &problem.config;
    let opts = SimplexOptions::default();
    let builder = LpBuilder::new(&problem.blocks, &problem.campus_limits, config, relax_contracts);
    if builder.lp.n_vars() == 0 {
        return Ok(OptimizationResult { clusters: Vec::new(), objective: 0.0, contract_slack: BTreeMap::new() });
    }
    let first = lp::solve(&builder.lp, &opts)?;

    // tie-break: least total |delta| over the optimal face. Variables with a
    // nonzero reduced cost are pinned and rows with a priced slack are made
    // tight, which leaves exactly the set of optimal solutions.
    let cmax = builder.lp.objective.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let dtol = config.tolerance.max(1e-12) * (1.0 + cmax);
    let mut face = builder.lp.clone();
    for (j, d) in first.reduced_costs.iter().enumerate() {
        if d.abs() > dtol {
            face.lower[j] = first.x[j];
            face.upper[j] = first.x[j];
        }
    }
    for (row, d) in face.rows.iter_mut().zip(&first.row_reduced_costs) {
        if d.abs() > dtol {
            row.kind = RowKind::Eq;
        }
    }
    face.objective = vec![0.0; face.n_vars()];
    for v in &builder.vars {
        for h in 0..HOURS {
            face.objective[v.pos[h]] = 1.0;
            face.objective[v.neg[h]] = 1.0;
        }
    }
    let z_tol = config.tolerance.max(1e-12) * (first.objective.abs() + builder.constant.abs()).max(1.0);
    let x = match lp::solve(&face, &opts) {
        Ok(s) if builder.lp.objective_value(&s.x) <= first.objective + z_tol => s.x,
        Ok(_) => {
            log::debug!("tie-break left the optimal face; keeping first-stage solution");
            first.x
        }
        Err(e) => {
            log::debug!("tie-break solve failed ({e}); keeping first-stage solution");
            first.x
        }
    };

    let mut clusters = Vec::with_capacity(problem.blocks.len());
    let mut objective = 0.0;
    for (b, v) in problem.blocks.iter().zip(&builder.vars) {
        let delta: Vec<f64> =
            (0..HOURS).map(|h| (x[v.pos[h]] - x[v.neg[h]]).clamp(b.delta_lower, b.delta_upper(h))).collect();
        let y = b.hourly_power(&delta).into_iter().fold(f64::MIN, f64::max);
        let emissions = b.emissions(&delta);
        let terms = ObjectiveTerms {
            emissions_kg: emissions,
            carbon_cost: config.lambda_e * emissions,
            peak_cost: config.lambda_p * y,
        };
        objective += terms.carbon_cost + terms.peak_cost;
        clusters.push(ClusterOutcome {
            cluster_id: b.cluster_id.clone(),
            status: ClusterStatus::Shaped,
            delta: Some(delta),
            peak_bound_kw: Some(y),
            terms: Some(terms),
        });
    }
    let mut contract_slack = BTreeMap::new();
    for (campus, s) in &builder.slacks {
        if x[*s] > 0.0 {
            objective += config.contract_penalty * x[*s];
            contract_slack.insert(campus.clone(), x[*s]);
        }
    }
    Ok(OptimizationResult { clusters, objective, contract_slack })
}
