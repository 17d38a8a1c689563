//! Day-ahead cluster forecasts.
//!
//! Inflexible usage is forecast hourly, flexible usage and total reservations
//! as daily totals, each as an EWMA weekly mean times EWMA seasonal factors
//! with a one-day deviation correction. Forecast errors feed the quantiles
//! that size the daily capacity requirement `theta` and the inflation factor
//! `alpha` applied to flexible usage.

mod ewma;
mod quantile;
mod ratio;
mod risk;
mod rolling;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ewma::{ewma_update, forecast_weekly_components, EwmaState, SeasonalComponents, FACTOR_DECAY, MEAN_DECAY};
pub use quantile::{
    empirical_quantile, error_quantile, ForecastErrorHistory, DAILY_WINDOW, DEFAULT_QUANTILE, MIN_ERRORS,
};
pub use ratio::{fit_ratio_model, RatioModel, MIN_RATIO_HOURS};
pub use risk::{
    apply_deviation_correction, compute_alpha, compute_theta, fit_deviation_beta, inflexible_quantile_profile,
    AlphaResult, MIN_DEVIATION_PAIRS,
};
pub use rolling::{backtest, daily_records, median, BacktestReport, DayRecord, PointPrediction, RollingForecaster};

pub const HOURS: usize = 24;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ForecastError {
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("no flexible load")]
    NoFlexibleLoad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub mean_decay: f64,
    pub factor_decay: f64,
    /// Power-capping exceedance probability.
    pub gamma: f64,
    /// Quantile of reservation errors used for the daily requirement.
    pub reservation_quantile: f64,
    pub error_window_days: usize,
    pub beta_window_days: usize,
    pub ratio_window_days: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            mean_decay: MEAN_DECAY,
            factor_decay: FACTOR_DECAY,
            gamma: 0.03,
            reservation_quantile: 0.97,
            error_window_days: DAILY_WINDOW,
            beta_window_days: 90,
            ratio_window_days: 90,
        }
    }
}

/// Next-day forecast of one cluster. Usage values in GCU, daily totals in
/// GCU-hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAheadForecast {
    pub cluster_id: String,
    pub date: NaiveDate,
    pub u_inflexible_hat: Vec<f64>,
    pub t_flexible_hat: f64,
    pub t_reservations_hat: f64,
    pub ratio_model: RatioModel,
    /// Ratio evaluated at nominal usage `u_if(h) + t_flex / 24`.
    pub ratio_curve: Vec<f64>,
    pub reservation_error_q: f64,
    pub theta: f64,
    pub alpha: f64,
    pub alpha_clamped: bool,
    pub tau_u: f64,
    pub inflexible_quantile_profile: Vec<f64>,
}

impl DayAheadForecast {
    /// Relative residual of `sum_h (u_if(h) + tau_u/24) ratio(h) = theta`.
    pub fn requirement_residual(&self) -> f64 {
        let lhs: f64 =
            self.u_inflexible_hat.iter().zip(&self.ratio_curve).map(|(u, r)| (u + self.tau_u / HOURS as f64) * r).sum();
        (lhs - self.theta).abs() / self.theta.abs().max(f64::MIN_POSITIVE)
    }

    /// Predicted inflexible reservations per hour, the floor of any curve.
    pub fn inflexible_floor(&self) -> Vec<f64> {
        self.u_inflexible_hat.iter().zip(&self.ratio_curve).map(|(u, r)| u * r).collect()
    }

    /// Nominal risk-aware usage `u_if(h) + tau_u / 24`.
    pub fn nominal_usage(&self) -> Vec<f64> {
        self.u_inflexible_hat.iter().map(|u| u + self.tau_u / HOURS as f64).collect()
    }
}

/// Inputs already forecast; derives ratio curve, theta, alpha and the
/// inflexible quantile profile.
#[allow(clippy::too_many_arguments)]
pub fn assemble_forecast(
    cluster_id: &str,
    date: NaiveDate,
    u_inflexible_hat: Vec<f64>,
    t_flexible_hat: f64,
    t_reservations_hat: f64,
    ratio_model: RatioModel,
    reservation_errors: &ForecastErrorHistory,
    inflexible_errors: &ForecastErrorHistory,
    config: &ForecastConfig,
) -> Result<DayAheadForecast, ForecastError> {
    assert_eq!(u_inflexible_hat.len(), HOURS);
    let u_inflexible_hat: Vec<f64> = u_inflexible_hat.into_iter().map(|u| u.max(0.0)).collect();
    let t_flexible_hat = t_flexible_hat.max(0.0);
    let t_reservations_hat = t_reservations_hat.max(0.0);
    let ratio_curve: Vec<f64> =
        u_inflexible_hat.iter().map(|u| ratio_model.eval(u + t_flexible_hat / HOURS as f64)).collect();
    let q = error_quantile(reservation_errors, config.reservation_quantile);
    let theta = compute_theta(t_reservations_hat, q);
    let a = compute_alpha(&u_inflexible_hat, t_flexible_hat, &ratio_curve, theta)?;
    let profile = inflexible_quantile_profile(&u_inflexible_hat, inflexible_errors, config.gamma);
    Ok(DayAheadForecast {
        cluster_id: cluster_id.to_string(),
        date,
        u_inflexible_hat,
        t_flexible_hat,
        t_reservations_hat,
        ratio_model,
        ratio_curve,
        reservation_error_q: q,
        theta,
        alpha: a.alpha,
        alpha_clamped: a.clamped,
        tau_u: a.tau_u,
        inflexible_quantile_profile: profile,
    })
}
