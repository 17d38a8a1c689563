use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    apply_deviation_correction, assemble_forecast, fit_deviation_beta, fit_ratio_model, forecast_weekly_components,
    DayAheadForecast, ForecastConfig, ForecastError, ForecastErrorHistory, HOURS,
};
use crate::telemetry::{HourLabeler, HourlyClusterSeries, HourlyValues};

/// One complete local day of hourly cluster values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub hours: Vec<HourlyValues>,
}

impl DayRecord {
    pub fn flexible_total(&self) -> f64 {
        self.hours.iter().map(|h| h.u_flexible).sum()
    }

    pub fn reservation_total(&self) -> f64 {
        self.hours.iter().map(HourlyValues::reservations).sum()
    }

    pub fn inflexible_total(&self) -> f64 {
        self.hours.iter().map(|h| h.u_inflexible).sum()
    }
}

/// Splits a series into complete local days and keeps the most recent run of
/// consecutive complete days.
pub fn daily_records(series: &HourlyClusterSeries, labeler: HourLabeler) -> Vec<DayRecord> {
    let mut days: Vec<DayRecord> = Vec::new();
    let mut i = 0;
    let pts = &series.points;
    while i < pts.len() {
        let h0 = pts[i].hour;
        if h0.rem_euclid(24) != 0 || i + HOURS > pts.len() {
            i += 1;
            continue;
        }
        let block = &pts[i..i + HOURS];
        let contiguous = block.iter().enumerate().all(|(k, p)| p.hour == h0 + k as i64);
        if contiguous {
            if let Some(hours) = block.iter().map(|p| p.values).collect::<Option<Vec<_>>>() {
                days.push(DayRecord { date: labeler.date_of(h0), hours });
            }
        }
        i += HOURS;
    }
    let mut start = 0;
    for k in 1..days.len() {
        if days[k].date.signed_duration_since(days[k - 1].date).num_days() != 1 {
            start = k;
        }
    }
    days.split_off(start)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Stream {
    /// Weekly-model prediction of each observed day's total, when available.
    weekly: Vec<Option<f64>>,
    actual: Vec<f64>,
}

impl Stream {
    fn deviation(&self, i: usize) -> Option<f64> {
        match self.weekly.get(i).copied().flatten() {
            Some(w) if w > 0.0 => Some(self.actual[i] / w - 1.0),
            _ => None,
        }
    }

    fn beta(&self, window: usize) -> f64 {
        let n = self.actual.len();
        let pairs: Vec<(f64, f64)> = (n.saturating_sub(window).max(1)..n)
            .filter_map(|i| Some((self.deviation(i - 1)?, self.deviation(i)?)))
            .collect();
        fit_deviation_beta(&pairs)
    }

    /// Corrects a weekly prediction for the next day.
    fn correct(&self, weekly_next: f64, window: usize) -> f64 {
        let n = self.actual.len();
        match n.checked_sub(1).and_then(|y| self.weekly[y].map(|w| (self.actual[y], w))) {
            Some((actual, w)) => apply_deviation_correction(weekly_next, actual, w, self.beta(window)),
            None => weekly_next,
        }
    }
}

/// Next-day point predictions before risk adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPrediction {
    pub u_inflexible: Vec<f64>,
    pub t_flexible: f64,
    pub t_reservations: f64,
    weekly_inflexible_total: f64,
    weekly_flexible: f64,
    weekly_reservations: f64,
}

/// Walks a cluster's history one day at a time, keeping the error histories
/// and deviation pairs needed for the next forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecaster {
    pub cluster_id: String,
    pub config: ForecastConfig,
    days: Vec<DayRecord>,
    inflexible: Stream,
    flexible: Stream,
    reservations: Stream,
    pub reservation_errors: ForecastErrorHistory,
    pub inflexible_errors: ForecastErrorHistory,
    pub flexible_errors: ForecastErrorHistory,
}

impl RollingForecaster {
    pub fn new(cluster_id: impl Into<String>, config: ForecastConfig) -> Self {
        let cluster_id = cluster_id.into();
        let w = config.error_window_days;
        Self {
            reservation_errors: ForecastErrorHistory::new(cluster_id.clone(), "t_reservations", w),
            inflexible_errors: ForecastErrorHistory::new(cluster_id.clone(), "u_inflexible_hourly", w * HOURS),
            flexible_errors: ForecastErrorHistory::new(cluster_id.clone(), "t_flexible", w),
            cluster_id,
            config,
            days: Vec::new(),
            inflexible: Stream::default(),
            flexible: Stream::default(),
            reservations: Stream::default(),
        }
    }

    /// Feeds every record in order.
    pub fn from_history(cluster_id: impl Into<String>, config: ForecastConfig, days: &[DayRecord]) -> Self {
        let mut f = Self::new(cluster_id, config);
        for d in days {
            f.observe(d.clone());
        }
        f
    }

    pub fn days(&self) -> &[DayRecord] {
        &self.days
    }

    pub fn next_date(&self) -> Option<NaiveDate> {
        self.days.last().and_then(|d| d.date.succ_opt())
    }

    pub fn predict_next(&self) -> Result<PointPrediction, ForecastError> {
        let c = &self.config;
        let hourly: Vec<f64> = self.days.iter().flat_map(|d| d.hours.iter().map(|h| h.u_inflexible)).collect();
        let flex: Vec<f64> = self.days.iter().map(DayRecord::flexible_total).collect();
        let res: Vec<f64> = self.days.iter().map(DayRecord::reservation_total).collect();

        let hw = forecast_weekly_components(&hourly, 7 * HOURS, c.mean_decay, c.factor_decay)?;
        let fw = forecast_weekly_components(&flex, 7, c.mean_decay, c.factor_decay)?;
        let rw = forecast_weekly_components(&res, 7, c.mean_decay, c.factor_decay)?;

        let weekly_hourly: Vec<f64> = (0..HOURS).map(|h| hw.predict(h)).collect();
        let weekly_inflexible_total: f64 = weekly_hourly.iter().sum();
        let inflex_corrected_total = self.inflexible.correct(weekly_inflexible_total, c.beta_window_days);
        let scale = if weekly_inflexible_total > 0.0 { inflex_corrected_total / weekly_inflexible_total } else { 1.0 };
        let weekly_flexible = fw.predict(0);
        let weekly_reservations = rw.predict(0);
        Ok(PointPrediction {
            u_inflexible: weekly_hourly.iter().map(|u| (u * scale).max(0.0)).collect(),
            t_flexible: self.flexible.correct(weekly_flexible, c.beta_window_days).max(0.0),
            t_reservations: self.reservations.correct(weekly_reservations, c.beta_window_days).max(0.0),
            weekly_inflexible_total,
            weekly_flexible,
            weekly_reservations,
        })
    }

    /// Appends the next day's actuals, first scoring what would have been
    /// predicted for it. A non-consecutive day restarts the history.
    pub fn observe(&mut self, day: DayRecord) {
        if let Some(next) = self.next_date() {
            if day.date != next {
                *self = Self::new(self.cluster_id.clone(), self.config);
            }
        }
        let pred = self.predict_next().ok();
        if let Some(p) = &pred {
            self.reservation_errors.record(day.reservation_total(), p.t_reservations);
            self.flexible_errors.record(day.flexible_total(), p.t_flexible);
            for (h, u) in day.hours.iter().zip(&p.u_inflexible) {
                self.inflexible_errors.record(h.u_inflexible, *u);
            }
        }
        self.inflexible.weekly.push(pred.as_ref().map(|p| p.weekly_inflexible_total));
        self.inflexible.actual.push(day.inflexible_total());
        self.flexible.weekly.push(pred.as_ref().map(|p| p.weekly_flexible));
        self.flexible.actual.push(day.flexible_total());
        self.reservations.weekly.push(pred.as_ref().map(|p| p.weekly_reservations));
        self.reservations.actual.push(day.reservation_total());
        self.days.push(day);
    }

    /// Full risk-aware forecast for the day after the last observed one.
    pub fn forecast(&self) -> Result<DayAheadForecast, ForecastError> {
        let date = self.next_date().ok_or_else(|| ForecastError::InsufficientHistory("no observed days".into()))?;
        let p = self.predict_next()?;
        let window = self.config.ratio_window_days.min(self.days.len());
        let pairs: Vec<(f64, f64)> = self.days[self.days.len() - window..]
            .iter()
            .flat_map(|d| d.hours.iter().map(|h| (h.usage(), h.reservations())))
            .collect();
        let ratio = fit_ratio_model(&pairs)?;
        assemble_forecast(
            &self.cluster_id,
            date,
            p.u_inflexible,
            p.t_flexible,
            p.t_reservations,
            ratio,
            &self.reservation_errors,
            &self.inflexible_errors,
            &self.config,
        )
    }
}

/// Absolute percent errors from a day-by-day replay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    /// Hourly APEs of the inflexible profile.
    pub u_inflexible: Vec<f64>,
    /// Daily APEs of total reservations.
    pub t_reservations: Vec<f64>,
    /// Hourly APEs of the ratio curve against realized reservations/usage.
    pub ratio: Vec<f64>,
    pub t_flexible: Vec<f64>,
}

fn ape(actual: f64, predicted: f64) -> Option<f64> {
    (actual > 0.0).then(|| (predicted - actual).abs() / actual)
}

pub fn median(v: &[f64]) -> Option<f64> {
    super::empirical_quantile(v, 0.5)
}

/// Replays `days`, forecasting each day from index `first_eval` on.
pub fn backtest(cluster_id: &str, config: ForecastConfig, days: &[DayRecord], first_eval: usize) -> BacktestReport {
    let mut f = RollingForecaster::new(cluster_id, config);
    let mut r = BacktestReport::default();
    for (i, day) in days.iter().enumerate() {
        if i >= first_eval {
            if let Ok(fc) = f.forecast() {
                for (h, hv) in day.hours.iter().enumerate() {
                    r.u_inflexible.extend(ape(hv.u_inflexible, fc.u_inflexible_hat[h]));
                    if hv.usage() > 0.0 {
                        r.ratio.extend(ape(hv.reservations() / hv.usage(), fc.ratio_curve[h]));
                    }
                }
                r.t_reservations.extend(ape(day.reservation_total(), fc.t_reservations_hat));
                r.t_flexible.extend(ape(day.flexible_total(), fc.t_flexible_hat));
            }
        }
        f.observe(day.clone());
    }
    r
}
