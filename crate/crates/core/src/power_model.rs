//! Piecewise-linear power models per power domain (PD) and the cluster-level
//! power function built from them.
//!
//! A cluster's usage `u` is split across its PDs by the time-averaged usage
//! fractions `lambda`, so that
//!
//! ```text
//! Pow_c(u)  = sum_pd Pow_pd(lambda_pd * u)
//! pi_c(u)   = sum_pd slope_pd(lambda_pd * u) * lambda_pd
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::PdObservation;

pub const MAX_SEGMENTS: usize = 3;
pub const DEFAULT_SEGMENTS: usize = 2;
const CANDIDATE_QUANTILES: usize = 20;
const REFINE_STEPS: usize = 24;
const MIN_TRAINING_DAYS: i64 = 7;

#[derive(Debug, Error, PartialEq)]
pub enum PowerModelError {
    /// Not enough history to fit; the PD (and its cluster) stays unmodeled.
    #[error("unmodeled PD `{pd_id}`: {reason}")]
    Unmodeled { pd_id: String, reason: String },
    #[error("segment count must be in 1..={MAX_SEGMENTS}, got {0}")]
    SegmentCount(usize),
    #[error("no usage to apportion")]
    NoUsage,
    #[error("cluster `{cluster}` is missing a model for PD `{pd_id}`")]
    MissingPd { cluster: String, pd_id: String },
    #[error("model store: {0}")]
    Store(String),
}

/// Continuous, nondecreasing piecewise-linear power curve of one PD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePowerModel {
    pub pd_id: String,
    /// Segment start points in GCU, ascending, first is 0.
    #[serde(rename = "breakpoints_gcu")]
    pub breakpoints: Vec<f64>,
    /// kW per GCU, one per segment.
    #[serde(rename = "slopes_kw_per_gcu")]
    pub slopes: Vec<f64>,
    /// Idle power in kW.
    #[serde(rename = "intercept_kw")]
    pub intercept: f64,
    pub fit_mape: f64,
}

impl PiecewisePowerModel {
    pub fn new(pd_id: impl Into<String>, breakpoints: Vec<f64>, slopes: Vec<f64>, intercept: f64) -> Self {
        assert_eq!(breakpoints.len(), slopes.len(), "one slope per segment");
        assert!(breakpoints.first() == Some(&0.0), "first breakpoint must be 0");
        Self { pd_id: pd_id.into(), breakpoints, slopes, intercept, fit_mape: 0.0 }
    }

    fn segment(&self, u: f64) -> usize {
        // right-continuous: a breakpoint belongs to the segment it starts
        self.breakpoints.iter().rposition(|&b| u >= b).unwrap_or(0)
    }

    /// Power in kW. Beyond the last breakpoint the last segment is extended.
    pub fn power(&self, u: f64) -> f64 {
        let mut p = self.intercept;
        for (k, &start) in self.breakpoints.iter().enumerate() {
            if u <= start {
                break;
            }
            let end = self.breakpoints.get(k + 1).copied().unwrap_or(f64::INFINITY);
            p += self.slopes[k] * (u.min(end) - start);
        }
        p
    }

    pub fn slope(&self, u: f64) -> f64 {
        self.slopes[self.segment(u)]
    }

    pub fn n_segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_valid(&self) -> bool {
        self.intercept >= 0.0
            && self.slopes.iter().all(|&s| s >= 0.0)
            && self.breakpoints.windows(2).all(|w| w[0] < w[1])
    }
}

/// Least-squares fit of a continuous piecewise-linear function with the given
/// interior knots. Returns (intercept, slopes, sse).
fn fit_with_knots(us: &[f64], ps: &[f64], knots: &[f64]) -> Option<(f64, Vec<f64>, f64)> {
    let k = knots.len() + 2;
    let scale = us.iter().fold(1.0f64, |m, &u| m.max(u.abs()));
    let basis = |u: f64, out: &mut [f64]| {
        out[0] = 1.0;
        out[1] = u / scale;
        for (j, &kn) in knots.iter().enumerate() {
            out[2 + j] = ((u - kn) / scale).max(0.0);
        }
    };
    let mut ata = vec![0.0; k * k];
    let mut atb = vec![0.0; k];
    let mut row = vec![0.0; k];
    for (&u, &p) in us.iter().zip(ps) {
        basis(u, &mut row);
        for i in 0..k {
            atb[i] += row[i] * p;
            for j in 0..k {
                ata[i * k + j] += row[i] * row[j];
            }
        }
    }
    let beta = crate::linalg::solve_dense(&mut ata, &mut atb, k)?;
    let mut slopes = Vec::with_capacity(k - 1);
    let mut s = 0.0;
    for b in &beta[1..] {
        s += b / scale;
        slopes.push(s);
    }
    let mut sse = 0.0;
    for (&u, &p) in us.iter().zip(ps) {
        basis(u, &mut row);
        let pred: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        sse += (pred - p).powi(2);
    }
    Some((beta[0], slopes, sse))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Picks knot positions minimizing training SSE over a quantile grid, then
/// refines each knot on a finer grid between its neighboring candidates.
fn search_knots(us: &[f64], ps: &[f64], n_knots: usize) -> Vec<f64> {
    if n_knots == 0 {
        return vec![];
    }
    let mut sorted = us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cands: Vec<f64> = (1..=CANDIDATE_QUANTILES)
        .map(|i| quantile_sorted(&sorted, i as f64 / (CANDIDATE_QUANTILES + 1) as f64))
        .collect();
    cands.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let lo_u = sorted[0];
    let hi_u = sorted[sorted.len() - 1];
    cands.retain(|&c| c > lo_u && c < hi_u);
    if cands.len() < n_knots {
        return vec![];
    }

    let sse = |knots: &[f64]| fit_with_knots(us, ps, knots).map(|f| f.2).unwrap_or(f64::INFINITY);
    let mut best: (f64, Vec<f64>) = (f64::INFINITY, vec![]);
    let consider = |knots: Vec<f64>, best: &mut (f64, Vec<f64>)| {
        let e = sse(&knots);
        if e < best.0 {
            *best = (e, knots);
        }
    };
    match n_knots {
        1 => {
            for &c in &cands {
                consider(vec![c], &mut best);
            }
        }
        _ => {
            for i in 0..cands.len() {
                for j in i + 1..cands.len() {
                    consider(vec![cands[i], cands[j]], &mut best);
                }
            }
        }
    }
    if best.1.is_empty() {
        return vec![];
    }

    // coordinate refinement between neighbouring candidates
    for _ in 0..2 {
        for k in 0..best.1.len() {
            let cur = best.1[k];
            let idx = cands.iter().position(|&c| c >= cur).unwrap_or(cands.len() - 1);
            let lo = if idx == 0 { lo_u } else { cands[idx - 1] };
            let hi = cands.get(idx + 1).copied().unwrap_or(hi_u);
            let lo = if k > 0 { lo.max(best.1[k - 1]) } else { lo };
            let hi = if k + 1 < best.1.len() { hi.min(best.1[k + 1]) } else { hi };
            for s in 1..REFINE_STEPS {
                let c = lo + (hi - lo) * s as f64 / REFINE_STEPS as f64;
                let mut knots = best.1.clone();
                knots[k] = c;
                if knots.windows(2).all(|w| w[0] < w[1]) {
                    consider(knots, &mut best);
                }
            }
        }
    }
    best.1
}

fn build_model(pd_id: &str, us: &[f64], ps: &[f64], n_segments: usize) -> PiecewisePowerModel {
    let (lo, hi) = us.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
    if !(hi - lo > 1e-9 * hi.abs().max(1.0)) {
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        return PiecewisePowerModel::new(pd_id, vec![0.0], vec![0.0], mean.max(0.0));
    }
    let mut knots = search_knots(us, ps, n_segments - 1);
    loop {
        let Some((intercept, slopes, _)) = fit_with_knots(us, ps, &knots) else {
            knots.pop();
            continue;
        };
        // a negative slope means the extra knot is not supported by the data
        if slopes.iter().any(|&s| s < 0.0) && !knots.is_empty() {
            let worst = slopes.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
            knots.remove(worst.saturating_sub(1).min(knots.len() - 1));
            continue;
        }
        let mut breakpoints = vec![0.0];
        breakpoints.extend(knots.iter().copied());
        let slopes: Vec<f64> = slopes.into_iter().map(|s| s.max(0.0)).collect();
        return PiecewisePowerModel::new(pd_id, breakpoints, slopes, intercept.max(0.0));
    }
}

/// Mean absolute percent error (fraction) over observations with positive power.
pub fn mape(model: &PiecewisePowerModel, obs: &[PdObservation]) -> f64 {
    let (sum, n) = obs
        .iter()
        .filter(|o| o.power > 0.0)
        .fold((0.0, 0usize), |(s, n), o| (s + (model.power(o.usage) - o.power).abs() / o.power, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn split_last_day(obs: &[PdObservation]) -> (&[PdObservation], &[PdObservation]) {
    let last = obs.last().expect("non-empty").timestamp;
    let cut = last - Duration::hours(24);
    let idx = obs.partition_point(|o| o.timestamp <= cut);
    obs.split_at(idx)
}

fn check_history(pd_id: &str, obs: &[PdObservation]) -> Result<(), PowerModelError> {
    let span = match (obs.first(), obs.last()) {
        (Some(a), Some(b)) => b.timestamp - a.timestamp,
        _ => Duration::zero(),
    };
    // 7 full days of 5-minute samples span 7 days minus one sample
    if span < Duration::days(MIN_TRAINING_DAYS) - Duration::minutes(5) {
        return Err(PowerModelError::Unmodeled {
            pd_id: pd_id.to_string(),
            reason: format!("need {MIN_TRAINING_DAYS} days of data, have {}h", span.num_hours()),
        });
    }
    Ok(())
}

/// Fits a PD model with exactly `n_segments` segments on all but the final
/// day of `obs` (sorted by time) and reports MAPE on that held-out day.
pub fn fit_pd_model(
    pd_id: &str,
    obs: &[PdObservation],
    n_segments: usize,
) -> Result<PiecewisePowerModel, PowerModelError> {
    if !(1..=MAX_SEGMENTS).contains(&n_segments) {
        return Err(PowerModelError::SegmentCount(n_segments));
    }
    check_history(pd_id, obs)?;
    let (train, test) = split_last_day(obs);
    let us: Vec<f64> = train.iter().map(|o| o.usage).collect();
    let ps: Vec<f64> = train.iter().map(|o| o.power).collect();
    let mut model = build_model(pd_id, &us, &ps, n_segments);
    model.fit_mape = mape(&model, test);
    Ok(model)
}

/// Like [`fit_pd_model`] but picks the segment count (1..=3) with the lowest
/// MAPE on the second-to-last day, then refits on the full training window.
pub fn fit_pd_model_auto(pd_id: &str, obs: &[PdObservation]) -> Result<PiecewisePowerModel, PowerModelError> {
    check_history(pd_id, obs)?;
    let (train, _) = split_last_day(obs);
    let (fit, validation) = split_last_day(train);
    let us: Vec<f64> = fit.iter().map(|o| o.usage).collect();
    let ps: Vec<f64> = fit.iter().map(|o| o.power).collect();
    let mut best = (f64::INFINITY, DEFAULT_SEGMENTS);
    for n in 1..=MAX_SEGMENTS {
        let m = build_model(pd_id, &us, &ps, n);
        // strict improvement needed to add segments
        let e = mape(&m, validation);
        if e < best.0 - 1e-6 {
            best = (e, n);
        }
    }
    fit_pd_model(pd_id, obs, best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdUsageFraction {
    pub pd_id: String,
    pub lambda: f64,
}

/// Time-averaged usage share of each PD. `rows[t][k]` is the usage of PD `k`
/// at sample `t`; samples whose cluster total is zero are skipped.
pub fn compute_fractions(pd_ids: &[String], rows: &[Vec<f64>]) -> Result<Vec<PdUsageFraction>, PowerModelError> {
    let mut acc = vec![0.0; pd_ids.len()];
    let mut n = 0usize;
    for row in rows {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for (a, u) in acc.iter_mut().zip(row) {
                *a += u / total;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(PowerModelError::NoUsage);
    }
    let sum: f64 = acc.iter().sum();
    Ok(pd_ids.iter().zip(acc).map(|(pd, a)| PdUsageFraction { pd_id: pd.clone(), lambda: a / sum }).collect())
}

/// Cluster power function and its sensitivity to cluster CPU usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPowerSensitivity {
    pub cluster_id: String,
    pub members: Vec<(PiecewisePowerModel, f64)>,
}

impl ClusterPowerSensitivity {
    pub fn new(cluster_id: impl Into<String>, members: Vec<(PiecewisePowerModel, f64)>) -> Self {
        Self { cluster_id: cluster_id.into(), members }
    }

    /// Assembles the cluster function from stored models and fractions.
    pub fn from_parts(
        cluster_id: &str,
        fractions: &[PdUsageFraction],
        models: &BTreeMap<String, PiecewisePowerModel>,
    ) -> Result<Self, PowerModelError> {
        let members = fractions
            .iter()
            .map(|f| {
                models.get(&f.pd_id).map(|m| (m.clone(), f.lambda)).ok_or_else(|| PowerModelError::MissingPd {
                    cluster: cluster_id.to_string(),
                    pd_id: f.pd_id.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self::new(cluster_id, members))
    }

    /// Cluster power (kW) at cluster usage `u` (GCU).
    pub fn power(&self, u: f64) -> f64 {
        self.members.iter().map(|(m, l)| m.power(l * u)).sum()
    }

    /// Local slope of [`Self::power`] in kW per GCU.
    pub fn sensitivity(&self, u: f64) -> f64 {
        self.members.iter().map(|(m, l)| m.slope(l * u) * l).sum()
    }

    /// Cluster-level usage values at which the sensitivity can jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .members
            .iter()
            .filter(|(_, l)| *l > 0.0)
            .flat_map(|(m, l)| m.breakpoints.iter().skip(1).map(move |bp| bp / l))
            .collect();
        b.sort_by(f64::total_cmp);
        b
    }
}

pub fn cluster_power(s: &ClusterPowerSensitivity, u: f64) -> f64 {
    s.power(u)
}

pub fn cluster_sensitivity(s: &ClusterPowerSensitivity, u: f64) -> f64 {
    s.sensitivity(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFractions {
    pub cluster_id: String,
    pub fractions: BTreeMap<String, f64>,
}

/// On-disk model store: per-PD models plus per-cluster fractions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelStore {
    pub pd_models: Vec<PiecewisePowerModel>,
    pub clusters: Vec<ClusterFractions>,
}

impl ModelStore {
    pub fn load(path: &Path) -> Result<Self, PowerModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PowerModelError::Store(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PowerModelError::Store(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model store serializes")
    }

    pub fn sensitivity(&self, cluster_id: &str) -> Result<ClusterPowerSensitivity, PowerModelError> {
        let cf = self
            .clusters
            .iter()
            .find(|c| c.cluster_id == cluster_id)
            .ok_or_else(|| PowerModelError::Store(format!("no fractions for cluster `{cluster_id}`")))?;
        let models: BTreeMap<String, PiecewisePowerModel> =
            self.pd_models.iter().map(|m| (m.pd_id.clone(), m.clone())).collect();
        let fractions: Vec<PdUsageFraction> =
            cf.fractions.iter().map(|(pd, l)| PdUsageFraction { pd_id: pd.clone(), lambda: *l }).collect();
        ClusterPowerSensitivity::from_parts(cluster_id, &fractions, &models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(days: i64, f: impl Fn(f64) -> f64, sigma: f64, seed: u64) -> Vec<PdObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        (0..days * 288)
            .map(|k| {
                let u: f64 = rng.random_range(0.0..2000.0);
                let p = f(u) + if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                PdObservation { timestamp: start + Duration::minutes(5 * k), usage: u, power: p }
            })
            .collect()
    }

    #[test]
    fn recovers_two_segment_model() {
        let truth = |u: f64| if u <= 1000.0 { 100.0 + 0.5 * u } else { 600.0 + 0.8 * (u - 1000.0) };
        let obs = synthetic(10, truth, 5.0, 7);
        let m = fit_pd_model("pd", &obs, 2).unwrap();
        assert_eq!(m.n_segments(), 2);
        assert!((m.slopes[0] - 0.5).abs() < 0.05, "{m:?}");
        assert!((m.slopes[1] - 0.8).abs() < 0.05, "{m:?}");
        assert!((m.breakpoints[1] - 1000.0).abs() < 100.0, "{m:?}");
        assert!(m.fit_mape < 0.05);
        assert!(m.is_valid());
    }

    #[test]
    fn flat_power_gives_zero_slope() {
        let obs = synthetic(8, |_| 200.0, 0.0, 1);
        let m = fit_pd_model("pd", &obs, 1).unwrap();
        assert!(m.slopes[0].abs() < 1e-9);
        assert!((m.intercept - 200.0).abs() < 1e-6);
        assert!(m.fit_mape < 1e-9);
    }

    #[test]
    fn constant_usage_is_single_segment() {
        let start = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let obs: Vec<_> = (0..8 * 288)
            .map(|k| PdObservation { timestamp: start + Duration::minutes(5 * k), usage: 50.0, power: 300.0 })
            .collect();
        let m = fit_pd_model("pd", &obs, 2).unwrap();
        assert_eq!(m.n_segments(), 1);
        assert_eq!(m.power(50.0), 300.0);
    }

    #[test]
    fn short_history_is_unmodeled() {
        let obs = synthetic(3, |u| u, 0.0, 1);
        assert!(matches!(fit_pd_model("pd", &obs, 2), Err(PowerModelError::Unmodeled { .. })));
        assert_eq!(fit_pd_model("pd", &obs, 4), Err(PowerModelError::SegmentCount(4)));
    }

    #[test]
    fn refit_is_deterministic_and_auto_picks_segments() {
        let truth = |u: f64| if u <= 800.0 { 50.0 + 0.3 * u } else { 290.0 + 0.9 * (u - 800.0) };
        let obs = synthetic(9, truth, 2.0, 3);
        assert_eq!(fit_pd_model("pd", &obs, 3).unwrap(), fit_pd_model("pd", &obs, 3).unwrap());
        let auto = fit_pd_model_auto("pd", &obs).unwrap();
        assert!(auto.n_segments() >= 2);
        let lin = synthetic(9, |u| 10.0 + 0.4 * u, 0.5, 4);
        assert_eq!(fit_pd_model_auto("pd", &lin).unwrap().n_segments(), 1);
    }

    #[test]
    fn fractions() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let one = compute_fractions(&ids[..1], &[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(one[0].lambda, 1.0);
        let f = compute_fractions(&ids, &vec![vec![40.0, 60.0]; 5]).unwrap();
        assert!((f[0].lambda - 0.4).abs() < 1e-12 && (f[1].lambda - 0.6).abs() < 1e-12);
        // alternating 0.3/0.7 and 0.5/0.5 with different totals
        let f = compute_fractions(&ids, &[vec![3.0, 7.0], vec![50.0, 50.0]]).unwrap();
        assert!((f[0].lambda - 0.4).abs() < 1e-12 && (f[1].lambda - 0.6).abs() < 1e-12);
        assert_eq!(compute_fractions(&ids, &[vec![0.0, 0.0]]), Err(PowerModelError::NoUsage));
    }

    fn two_pd_cluster() -> ClusterPowerSensitivity {
        let a = PiecewisePowerModel::new("a", vec![0.0, 1000.0], vec![0.5, 0.9], 100.0);
        let b = PiecewisePowerModel::new("b", vec![0.0, 2000.0], vec![1.0, 1.2], 50.0);
        ClusterPowerSensitivity::new("c", vec![(a, 0.4), (b, 0.6)])
    }

    #[test]
    fn cluster_power_and_sensitivity() {
        let c = two_pd_cluster();
        assert_eq!(c.power(0.0), 150.0);
        let d = c.power(600.0) - c.power(500.0);
        assert!((d - 80.0).abs() < 1e-9);
        assert!((c.sensitivity(500.0) - 0.8).abs() < 1e-12);

        let single =
            ClusterPowerSensitivity::new("s", vec![(PiecewisePowerModel::new("a", vec![0.0], vec![0.7], 10.0), 1.0)]);
        assert_eq!(single.sensitivity(123.0), 0.7);
        assert_eq!(single.power(10.0), 17.0);

        // PD a crosses its breakpoint at cluster usage 1000 / 0.4 = 2500
        let below = c.sensitivity(2500.0 - 1e-6);
        let above = c.sensitivity(2500.0);
        assert!((above - below - 0.4 * (0.9 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn model_store_roundtrip() {
        let c = two_pd_cluster();
        let store = ModelStore {
            pd_models: c.members.iter().map(|(m, _)| m.clone()).collect(),
            clusters: vec![ClusterFractions {
                cluster_id: "c".into(),
                fractions: c.members.iter().map(|(m, l)| (m.pd_id.clone(), *l)).collect(),
            }],
        };
        let json = store.to_json();
        assert!(json.contains("breakpoints_gcu") && json.contains("slopes_kw_per_gcu"));
        let back: ModelStore = serde_json::from_str(&json).unwrap();
        assert_eq!(back.sensitivity("c").unwrap(), c);
    }

    proptest::proptest! {
        #[test]
        fn power_nondecreasing_and_derivative_matches(
            slopes in proptest::collection::vec(0.0f64..2.0, 1..4),
            gaps in proptest::collection::vec(10.0f64..500.0, 3),
            intercept in 0.0f64..500.0,
            u in 0.0f64..3000.0,
        ) {
            let mut bps = vec![0.0];
            for g in gaps.iter().take(slopes.len() - 1) {
                let last = *bps.last().unwrap();
                bps.push(last + g);
            }
            let m = PiecewisePowerModel::new("p", bps.clone(), slopes, intercept);
            let c = ClusterPowerSensitivity::new("c", vec![(m, 1.0)]);
            proptest::prop_assert!(c.power(u + 1.0) >= c.power(u));
            if bps.iter().all(|b| (u - b).abs() > 2.0) {
                let num = (c.power(u + 1.0) - c.power(u - 1.0)) / 2.0;
                let s = c.sensitivity(u);
                proptest::prop_assert!((num - s).abs() <= 1e-6 * s.abs().max(1e-9) + 1e-9);
            }
        }
    }

    #[test]
    fn noise_free_random_fit_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let s0: f64 = rng.random_range(0.2..0.6);
            let s1: f64 = s0 + rng.random_range(0.1..0.5);
            let bp: f64 = rng.random_range(600.0..1400.0);
            let truth = move |u: f64| if u <= bp { 80.0 + s0 * u } else { 80.0 + s0 * bp + s1 * (u - bp) };
            let m = fit_pd_model("pd", &synthetic(8, truth, 0.0, 5), 2).unwrap();
            assert!(m.fit_mape < 2e-3, "{m:?} bp {bp}");
        }
    }
}
