//! Hourly grid carbon-intensity forecasts: wire parsing, alignment to the
//! local planning day, and pluggable sources.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::HourLabeler;

/// Longest run of missing hours that alignment will interpolate.
pub const MAX_INTERPOLATED_HOURS: usize = 2;
pub const DEFAULT_STALENESS_HOURS: i64 = 24;

#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("carbon document: {0}")]
    Parse(String),
    #[error("carbon document is missing the zone")]
    MissingZone,
    #[error("carbon forecast timestamps not strictly increasing at {0}")]
    NonMonotone(DateTime<Utc>),
    #[error("duplicate carbon forecast hour {0}")]
    DuplicateHour(DateTime<Utc>),
    #[error("negative carbon intensity at {0}")]
    Negative(DateTime<Utc>),
    #[error("carbon forecast timestamp {0} is not on the hourly grid")]
    OffGrid(DateTime<Utc>),
    #[error("insufficient carbon data for zone `{zone}` on {date}: {reason}")]
    Insufficient { zone: String, date: NaiveDate, reason: String },
    #[error("no carbon forecast available for zone `{0}`")]
    NotFound(String),
    #[error("carbon forecast for zone `{zone}` is stale: issued {issued_at}, {age_hours}h old")]
    Stale { zone: String, issued_at: DateTime<Utc>, age_hours: i64 },
    #[error("carbon source io: {0}")]
    Io(String),
}

/// Wire shape: intensities in gCO2e/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonDocument {
    #[serde(default)]
    pub zone: Option<String>,
    pub issued_at: DateTime<Utc>,
    pub forecast: Vec<CarbonPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonPoint {
    pub datetime: DateTime<Utc>,
    pub carbon_intensity_g_per_kwh: f64,
}

/// Parsed forecast; intensities in kgCO2e/kWh on an hourly grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonForecast {
    pub grid_zone: String,
    pub issued_at: DateTime<Utc>,
    pub horizon: Vec<(DateTime<Utc>, f64)>,
}

impl CarbonForecast {
    pub fn to_document(&self) -> CarbonDocument {
        CarbonDocument {
            zone: Some(self.grid_zone.clone()),
            issued_at: self.issued_at,
            forecast: self
                .horizon
                .iter()
                .map(|&(datetime, kg)| CarbonPoint { datetime, carbon_intensity_g_per_kwh: kg * 1000.0 })
                .collect(),
        }
    }
}

pub fn parse_carbon_document(doc: CarbonDocument) -> Result<CarbonForecast, CarbonError> {
    let zone = doc.zone.filter(|z| !z.trim().is_empty()).ok_or(CarbonError::MissingZone)?;
    let mut horizon = Vec::with_capacity(doc.forecast.len());
    let mut prev: Option<DateTime<Utc>> = None;
    for p in doc.forecast {
        if p.datetime.minute() != 0 || p.datetime.second() != 0 || p.datetime.nanosecond() != 0 {
            return Err(CarbonError::OffGrid(p.datetime));
        }
        if let Some(t) = prev {
            if p.datetime == t {
                return Err(CarbonError::DuplicateHour(p.datetime));
            }
            if p.datetime < t {
                return Err(CarbonError::NonMonotone(p.datetime));
            }
        }
        if !(p.carbon_intensity_g_per_kwh >= 0.0) || !p.carbon_intensity_g_per_kwh.is_finite() {
            return Err(CarbonError::Negative(p.datetime));
        }
        prev = Some(p.datetime);
        horizon.push((p.datetime, p.carbon_intensity_g_per_kwh / 1000.0));
    }
    Ok(CarbonForecast { grid_zone: zone, issued_at: doc.issued_at, horizon })
}

pub fn parse_carbon_forecast(json: &str) -> Result<CarbonForecast, CarbonError> {
    let doc: CarbonDocument = serde_json::from_str(json).map_err(|e| CarbonError::Parse(e.to_string()))?;
    parse_carbon_document(doc)
}

/// Returns the 24 hourly intensities of the local planning day. Interior runs
/// of up to two missing hours are interpolated; anything else is an error.
pub fn align_to_planning_day(
    forecast: &CarbonForecast,
    planning_date: NaiveDate,
    labeler: HourLabeler,
) -> Result<Vec<f64>, CarbonError> {
    let by_time: BTreeMap<DateTime<Utc>, f64> = forecast.horizon.iter().copied().collect();
    let start = labeler.hour_start_utc(labeler.first_hour_of(planning_date));
    let mut vals: Vec<Option<f64>> = (0..24).map(|h| by_time.get(&(start + Duration::hours(h))).copied()).collect();
    let insufficient =
        |reason: String| CarbonError::Insufficient { zone: forecast.grid_zone.clone(), date: planning_date, reason };

    let mut h = 0;
    while h < 24 {
        if vals[h].is_some() {
            h += 1;
            continue;
        }
        let gap_start = h;
        while h < 24 && vals[h].is_none() {
            h += 1;
        }
        let len = h - gap_start;
        if len > MAX_INTERPOLATED_HOURS {
            return Err(insufficient(format!("{len} consecutive hours missing")));
        }
        // neighbours may lie just outside the planning day
        let left_t = start + Duration::hours(gap_start as i64 - 1);
        let right_t = start + Duration::hours(h as i64);
        let left = if gap_start > 0 { vals[gap_start - 1] } else { by_time.get(&left_t).copied() };
        let right = if h < 24 { vals[h] } else { by_time.get(&right_t).copied() };
        let (Some(l), Some(r)) = (left, right) else {
            return Err(insufficient("missing hours at the edge of the horizon".into()));
        };
        for k in 0..len {
            let t = (k + 1) as f64 / (len + 1) as f64;
            vals[gap_start + k] = Some(l + (r - l) * t);
        }
    }
    Ok(vals.into_iter().map(|v| v.expect("filled")).collect())
}

/// Where forecasts come from.
pub trait CarbonSource {
    /// Most recently issued forecast for `zone`, rejected when older than the
    /// staleness limit relative to `now`.
    fn fetch_latest(&self, zone: &str, now: DateTime<Utc>) -> Result<CarbonForecast, CarbonError>;
}

fn check_staleness(f: CarbonForecast, now: DateTime<Utc>, staleness: Duration) -> Result<CarbonForecast, CarbonError> {
    let age = now - f.issued_at;
    if age > staleness {
        return Err(CarbonError::Stale { zone: f.grid_zone, issued_at: f.issued_at, age_hours: age.num_hours() });
    }
    Ok(f)
}

type ParsedDocument = (PathBuf, Result<CarbonForecast, CarbonError>);

/// Directory of carbon JSON documents (`*.json`). Unparseable files are
/// skipped with a warning.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    pub dir: PathBuf,
    pub staleness: Duration,
}

impl DirectorySource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), staleness: Duration::hours(DEFAULT_STALENESS_HOURS) }
    }

    pub fn with_staleness_hours(mut self, hours: i64) -> Self {
        self.staleness = Duration::hours(hours);
        self
    }

    fn documents(&self) -> Result<Vec<ParsedDocument>, CarbonError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.dir)
            .map_err(|e| CarbonError::Io(format!("{}: {e}", self.dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        Ok(paths
            .into_iter()
            .map(|p| {
                let parsed = std::fs::read_to_string(&p)
                    .map_err(|e| CarbonError::Io(e.to_string()))
                    .and_then(|s| parse_carbon_forecast(&s));
                (p, parsed)
            })
            .collect())
    }

    /// Latest forecast per zone regardless of age.
    pub fn latest_any_age(&self, zone: &str) -> Result<CarbonForecast, CarbonError> {
        let mut best: Option<CarbonForecast> = None;
        for (path, doc) in self.documents()? {
            match doc {
                Ok(f) if f.grid_zone == zone => {
                    if best.as_ref().is_none_or(|b| f.issued_at > b.issued_at) {
                        best = Some(f);
                    }
                }
                Ok(_) => {}
                Err(e) => log::warn!("skipping carbon document {}: {e}", path.display()),
            }
        }
        best.ok_or_else(|| CarbonError::NotFound(zone.to_string()))
    }
}

impl CarbonSource for DirectorySource {
    fn fetch_latest(&self, zone: &str, now: DateTime<Utc>) -> Result<CarbonForecast, CarbonError> {
        check_staleness(self.latest_any_age(zone)?, now, self.staleness)
    }
}

/// A primary source backed by a directory cache: on any primary failure
/// other than staleness the most recent cached document is used.
pub struct CachedSource<S> {
    pub primary: S,
    pub cache: DirectorySource,
}

impl<S: CarbonSource> CarbonSource for CachedSource<S> {
    fn fetch_latest(&self, zone: &str, now: DateTime<Utc>) -> Result<CarbonForecast, CarbonError> {
        match self.primary.fetch_latest(zone, now) {
            Ok(f) => Ok(f),
            Err(e @ CarbonError::Stale { .. }) => Err(e),
            Err(e) => {
                log::warn!("carbon primary source failed for `{zone}` ({e}); using cache");
                self.cache.fetch_latest(zone, now)
            }
        }
    }
}

/// Writes a forecast as a wire document into `dir`.
pub fn write_document(dir: &Path, forecast: &CarbonForecast) -> Result<PathBuf, CarbonError> {
    std::fs::create_dir_all(dir).map_err(|e| CarbonError::Io(e.to_string()))?;
    let name = format!("{}_{}.json", forecast.grid_zone, forecast.issued_at.format("%Y%m%dT%H%M%SZ"));
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(&forecast.to_document()).expect("serializable");
    std::fs::write(&path, json).map_err(|e| CarbonError::Io(e.to_string()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn doc(zone: &str, issued: DateTime<Utc>, start: DateTime<Utc>, vals: &[f64]) -> String {
        let points: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(i, v)| {
                format!(
                    r#"{{"datetime":"{}","carbon_intensity_g_per_kwh":{v}}}"#,
                    (start + Duration::hours(i as i64)).to_rfc3339()
                )
            })
            .collect();
        format!(r#"{{"zone":"{zone}","issued_at":"{}","forecast":[{}]}}"#, issued.to_rfc3339(), points.join(","))
    }

    fn day_start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 2, 12, 8, 0, 0).unwrap()
    }

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 2, 12).unwrap()
    }

    #[test]
    fn parses_and_converts_units() {
        let f = parse_carbon_forecast(&doc("z", day_start(), day_start(), &[500.0; 48])).unwrap();
        assert_eq!(f.horizon.len(), 48);
        assert_eq!(f.horizon[0].1, 0.5);
    }

    #[test]
    fn parse_errors() {
        let mut vals = vec![300.0; 4];
        let good = doc("z", day_start(), day_start(), &vals);
        let dup = good.replace(&(day_start() + Duration::hours(1)).to_rfc3339(), &day_start().to_rfc3339());
        assert!(matches!(parse_carbon_forecast(&dup), Err(CarbonError::DuplicateHour(_))));
        vals[2] = -1.0;
        assert!(matches!(
            parse_carbon_forecast(&doc("z", day_start(), day_start(), &vals)),
            Err(CarbonError::Negative(_))
        ));
        let no_zone = good.replace(r#""zone":"z","#, "");
        assert!(matches!(parse_carbon_forecast(&no_zone), Err(CarbonError::MissingZone)));
        assert!(matches!(parse_carbon_forecast("{oops"), Err(CarbonError::Parse(_))));
    }

    #[test]
    fn alignment() {
        let vals: Vec<f64> = (0..30).map(|i| 100.0 + i as f64).collect();
        // horizon starts 3h before the local day
        let f = parse_carbon_forecast(&doc("z", day_start(), day_start() - Duration::hours(3), &vals)).unwrap();
        let eta = align_to_planning_day(&f, date(), HourLabeler::default()).unwrap();
        assert_eq!(eta.len(), 24);
        assert!((eta[0] - 0.103).abs() < 1e-12);

        // exact coverage is passed through, and aligning is idempotent
        let exact: Vec<f64> = (0..24).map(|i| 200.0 + 10.0 * i as f64).collect();
        let f = parse_carbon_forecast(&doc("z", day_start(), day_start(), &exact)).unwrap();
        let eta = align_to_planning_day(&f, date(), HourLabeler::default()).unwrap();
        assert_eq!(eta, exact.iter().map(|v| v / 1000.0).collect::<Vec<_>>());
        let again = CarbonForecast {
            grid_zone: "z".into(),
            issued_at: day_start(),
            horizon: eta.iter().enumerate().map(|(h, v)| (day_start() + Duration::hours(h as i64), *v)).collect(),
        };
        assert_eq!(align_to_planning_day(&again, date(), HourLabeler::default()).unwrap(), eta);
    }

    #[test]
    fn alignment_gaps() {
        let mut f = parse_carbon_forecast(&doc("z", day_start(), day_start(), &[400.0; 24])).unwrap();
        f.horizon[5].1 = 0.4;
        f.horizon[7].1 = 0.6;
        f.horizon.remove(6);
        let eta = align_to_planning_day(&f, date(), HourLabeler::default()).unwrap();
        assert!((eta[6] - 0.5).abs() < 1e-12);

        f.horizon.drain(8..11);
        assert!(matches!(
            align_to_planning_day(&f, date(), HourLabeler::default()),
            Err(CarbonError::Insufficient { .. })
        ));
    }

    #[test]
    fn directory_source() {
        let dir = tempfile::tempdir().unwrap();
        let t0 = day_start();
        let write = |name: &str, issued: DateTime<Utc>, v: f64| {
            std::fs::write(dir.path().join(name), doc("z", issued, t0, &[v; 48])).unwrap();
        };
        let src = DirectorySource::new(dir.path());
        assert!(matches!(src.fetch_latest("z", t0), Err(CarbonError::NotFound(_))));
        write("a.json", t0 - Duration::hours(2), 100.0);
        write("b.json", t0 - Duration::hours(1), 200.0);
        std::fs::write(dir.path().join("c.json"), "garbage").unwrap();
        let f = src.fetch_latest("z", t0).unwrap();
        assert_eq!(f.horizon[0].1, 0.2);
        assert!(matches!(src.fetch_latest("z", t0 + Duration::hours(30)), Err(CarbonError::Stale { .. })));
    }

    struct Failing;
    impl CarbonSource for Failing {
        fn fetch_latest(&self, _: &str, _: DateTime<Utc>) -> Result<CarbonForecast, CarbonError> {
            Err(CarbonError::Io("connection refused".into()))
        }
    }

    #[test]
    fn cached_source_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let f = parse_carbon_forecast(&doc("z", day_start(), day_start(), &[321.0; 24])).unwrap();
        write_document(dir.path(), &f).unwrap();
        let src = CachedSource { primary: Failing, cache: DirectorySource::new(dir.path()) };
        assert_eq!(src.fetch_latest("z", day_start()).unwrap(), f);
    }
}
