use serde::{Deserialize, Serialize};

use super::ForecastError;

/// Decay applied to successive weekly means.
pub const MEAN_DECAY: f64 = 0.45;
/// Decay applied to hour-of-week (or day-of-week) factors.
pub const FACTOR_DECAY: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    pub decay: f64,
    pub level: Option<f64>,
}

impl EwmaState {
    pub fn new(decay: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0, "decay must lie in (0, 1)");
        Self { decay, level: None }
    }

    /// `level <- decay * obs + (1 - decay) * level`; the first observation
    /// initializes the level.
    pub fn update(&mut self, obs: f64) {
        debug_assert!(obs.is_finite());
        self.level = Some(match self.level {
            None => obs,
            Some(l) => self.decay * obs + (1.0 - self.decay) * l,
        });
    }
}

pub fn ewma_update(state: EwmaState, obs: f64) -> EwmaState {
    let mut s = state;
    s.update(obs);
    s
}

/// Next-period prediction as mean x per-slot factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalComponents {
    pub mean: f64,
    /// One factor per slot of the period. Slot 0 is the value immediately
    /// following the history.
    pub factors: Vec<f64>,
}

impl SeasonalComponents {
    pub fn predict(&self, slot: usize) -> f64 {
        self.mean * self.factors[slot % self.factors.len()]
    }
}

/// Fits the mean/factor decomposition on the complete periods at the end of
/// `history` (a leading partial period is ignored). `period` is 168 for
/// hourly quantities and 7 for daily ones.
pub fn forecast_weekly_components(
    history: &[f64],
    period: usize,
    mean_decay: f64,
    factor_decay: f64,
) -> Result<SeasonalComponents, ForecastError> {
    let n_periods = history.len() / period;
    if n_periods < 2 {
        return Err(ForecastError::InsufficientHistory(format!(
            "need 2 complete weeks, have {} values for period {period}",
            history.len()
        )));
    }
    let tail = &history[history.len() - n_periods * period..];
    let mut mean = EwmaState::new(mean_decay);
    let mut factors = vec![EwmaState::new(factor_decay); period];
    for week in tail.chunks_exact(period) {
        let m = week.iter().sum::<f64>() / period as f64;
        mean.update(m);
        if m > 0.0 {
            for (f, v) in factors.iter_mut().zip(week) {
                f.update(v / m);
            }
        }
    }
    Ok(SeasonalComponents {
        mean: mean.level.unwrap_or(0.0),
        factors: factors.iter().map(|f| f.level.unwrap_or(1.0)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ewma_examples() {
        let mut s = EwmaState::new(0.45);
        for _ in 0..10 {
            s.update(3.0);
        }
        assert_eq!(s.level, Some(3.0));

        let s = ewma_update(EwmaState { decay: 0.45, level: Some(10.0) }, 20.0);
        assert!((s.level.unwrap() - 14.5).abs() < 1e-12);

        let mut s = EwmaState { decay: 0.07, level: Some(1.0) };
        for _ in 0..10 {
            s.update(2.0);
        }
        // closed form: 2 - 0.93^10
        let expected = 2.0 - 0.93f64.powi(10);
        assert!((s.level.unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.516).abs() < 1e-3);
    }

    #[test]
    fn periodic_history_reproduces_period() {
        let week: Vec<f64> =
            (0..168).map(|h| 50.0 + 30.0 * ((h as f64) / 24.0 * std::f64::consts::TAU).sin().abs()).collect();
        let hist: Vec<f64> = week.iter().cycle().take(168 * 4).copied().collect();
        let c = forecast_weekly_components(&hist, 168, MEAN_DECAY, FACTOR_DECAY).unwrap();
        for (h, v) in week.iter().enumerate() {
            assert!((c.predict(h) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_and_two_week_examples() {
        let c = forecast_weekly_components(&[5.0; 21], 7, MEAN_DECAY, FACTOR_DECAY).unwrap();
        assert_eq!(c.mean, 5.0);
        assert!(c.factors.iter().all(|&f| f == 1.0));

        let mut hist = vec![100.0; 7];
        hist.extend([120.0; 7]);
        let c = forecast_weekly_components(&hist, 7, MEAN_DECAY, FACTOR_DECAY).unwrap();
        assert!((c.mean - 109.0).abs() < 1e-12);
        assert!((c.predict(0) - 109.0).abs() < 1e-12);
    }

    #[test]
    fn insufficient_history() {
        assert!(matches!(
            forecast_weekly_components(&[1.0; 13], 7, MEAN_DECAY, FACTOR_DECAY),
            Err(ForecastError::InsufficientHistory(_))
        ));
    }

    #[test]
    fn leading_partial_week_ignored() {
        let mut hist = vec![999.0; 3];
        hist.extend([4.0; 14]);
        let c = forecast_weekly_components(&hist, 7, MEAN_DECAY, FACTOR_DECAY).unwrap();
        assert_eq!(c.mean, 4.0);
    }
}
