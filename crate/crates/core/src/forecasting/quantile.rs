use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Minimum number of recorded errors before the empirical quantile is used.
pub const MIN_ERRORS: usize = 14;
/// Used in place of an empirical quantile while history is thin.
pub const DEFAULT_QUANTILE: f64 = 0.25;
pub const DAILY_WINDOW: usize = 90;

/// Empirical quantile with linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted sample).
pub fn empirical_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Ring of recent signed relative forecast errors `(actual - predicted) / predicted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrorHistory {
    pub cluster_id: String,
    pub quantity: String,
    pub capacity: usize,
    pub errors: VecDeque<f64>,
}

impl ForecastErrorHistory {
    pub fn new(cluster_id: impl Into<String>, quantity: impl Into<String>, capacity: usize) -> Self {
        Self {
            cluster_id: cluster_id.into(),
            quantity: quantity.into(),
            capacity,
            errors: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push_error(&mut self, e: f64) {
        if !e.is_finite() {
            return;
        }
        if self.errors.len() == self.capacity {
            self.errors.pop_front();
        }
        self.errors.push_back(e);
    }

    /// Records the relative error of one prediction; ignored when
    /// `predicted <= 0`.
    pub fn record(&mut self, actual: f64, predicted: f64) {
        if predicted > 0.0 {
            self.push_error((actual - predicted) / predicted);
        }
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// `q`-quantile of the recorded errors, or [`DEFAULT_QUANTILE`] when fewer
/// than [`MIN_ERRORS`] are available.
pub fn error_quantile(history: &ForecastErrorHistory, q: f64) -> f64 {
    assert!(q > 0.0 && q < 1.0, "quantile level must lie in (0, 1)");
    if history.len() < MIN_ERRORS {
        return DEFAULT_QUANTILE;
    }
    let v: Vec<f64> = history.errors.iter().copied().collect();
    empirical_quantile(&v, q).expect("non-empty")
}
