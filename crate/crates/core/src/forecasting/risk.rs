//! Risk-aware daily capacity requirement and flexible-usage inflation.

use serde::{Deserialize, Serialize};

use super::quantile::{error_quantile, ForecastErrorHistory};
use super::ForecastError;

pub const MIN_DEVIATION_PAIRS: usize = 14;

/// `weekly * (1 + beta * dev)` with `dev = yesterday_actual / yesterday_weekly - 1`.
pub fn apply_deviation_correction(
    weekly_prediction: f64,
    yesterday_actual: f64,
    yesterday_weekly_prediction: f64,
    beta: f64,
) -> f64 {
    if !(yesterday_weekly_prediction > 0.0) {
        return weekly_prediction;
    }
    let dev = yesterday_actual / yesterday_weekly_prediction - 1.0;
    weekly_prediction * (1.0 + beta * dev)
}

/// Slope through the origin of today's deviation on yesterday's, clamped to
/// [0, 1]. Pairs are `(yesterday_dev, today_dev)`.
pub fn fit_deviation_beta(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < MIN_DEVIATION_PAIRS {
        return 0.0;
    }
    let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
    (sxy / sxx).clamp(0.0, 1.0)
}

/// Daily capacity requirement `T_R_hat * (1 + q97)`.
pub fn compute_theta(t_reservations_hat: f64, err_q97: f64) -> f64 {
    t_reservations_hat * (1.0 + err_q97)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub alpha: f64,
    pub tau_u: f64,
    /// True when the unclamped solution was negative: the daily requirement
    /// is already exhausted by predicted inflexible reservations.
    pub clamped: bool,
}

/// Closed-form inflation factor solving
/// `sum_h (u_if(h) + alpha * t_flex / 24) * ratio(h) = theta`, clamped at 0.
pub fn compute_alpha(
    u_inflexible_hat: &[f64],
    t_flexible_hat: f64,
    ratio_curve: &[f64],
    theta: f64,
) -> Result<AlphaResult, ForecastError> {
    if !(t_flexible_hat > 0.0) {
        return Err(ForecastError::NoFlexibleLoad);
    }
    let inflexible: f64 = u_inflexible_hat.iter().zip(ratio_curve).map(|(u, r)| u * r).sum();
    let ratio_sum: f64 = ratio_curve.iter().sum();
    let raw = (theta - inflexible) / (t_flexible_hat / 24.0 * ratio_sum);
    let alpha = raw.max(0.0);
    Ok(AlphaResult { alpha, tau_u: alpha * t_flexible_hat, clamped: raw < 0.0 })
}

/// Upper `(1 - gamma)` quantile profile of inflexible usage.
pub fn inflexible_quantile_profile(u_inflexible_hat: &[f64], history: &ForecastErrorHistory, gamma: f64) -> Vec<f64> {
    assert!(gamma > 0.0 && gamma < 0.5, "gamma must lie in (0, 0.5)");
    let q = error_quantile(history, 1.0 - gamma);
    u_inflexible_hat.iter().map(|u| u * (1.0 + q)).collect()
}
