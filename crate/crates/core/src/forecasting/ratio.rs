use serde::{Deserialize, Serialize};

use super::ForecastError;

pub const MIN_RATIO_HOURS: usize = 14 * 24;

/// Reservation-to-usage ratio as a linear function of log usage,
/// floored at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub a: f64,
    pub b: f64,
}

impl RatioModel {
    pub fn eval(&self, usage: f64) -> f64 {
        let raw = if usage > 0.0 { self.a + self.b * usage.ln() } else { self.a };
        raw.max(1.0)
    }
}

/// Least-squares fit of `reservations / usage = a + b ln(usage)` over hourly
/// `(usage, reservations)` pairs with positive usage.
pub fn fit_ratio_model(pairs: &[(f64, f64)]) -> Result<RatioModel, ForecastError> {
    let pts: Vec<(f64, f64)> =
        pairs.iter().filter(|(u, r)| *u > 0.0 && r.is_finite()).map(|&(u, r)| (u.ln(), r / u)).collect();
    if pts.len() < MIN_RATIO_HOURS {
        return Err(ForecastError::InsufficientHistory(format!(
            "ratio model needs {MIN_RATIO_HOURS} hourly pairs, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-12 * n {
        return Ok(RatioModel { a: my, b: 0.0 });
    }
    let b = sxy / sxx;
    Ok(RatioModel { a: my - b * mx, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_ratio() {
        let pairs: Vec<_> = (1..=400).map(|i| (i as f64, 1.5 * i as f64)).collect();
        let m = fit_ratio_model(&pairs).unwrap();
        assert!((m.a - 1.5).abs() < 1e-12 && m.b.abs() < 1e-12);
    }

    #[test]
    fn recovers_log_model() {
        let pairs: Vec<_> = (1..=400)
            .map(|i| {
                let u = 10.0 * i as f64;
                (u, u * (3.0 - 0.2 * u.ln()))
            })
            .collect();
        let m = fit_ratio_model(&pairs).unwrap();
        assert!((m.a - 3.0).abs() < 1e-6 && (m.b + 0.2).abs() < 1e-6);
        // 3 - 0.2 ln u < 1 for u > e^10
        assert_eq!(m.eval(1e6), 1.0);
    }

    #[test]
    fn degenerate_and_short() {
        let pairs = vec![(50.0, 70.0); 400];
        let m = fit_ratio_model(&pairs).unwrap();
        assert!((m.a - 1.4).abs() < 1e-12 && m.b == 0.0);
        assert!(fit_ratio_model(&pairs[..100]).is_err());
    }
}
