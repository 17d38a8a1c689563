//! Usage and power telemetry: CSV ingestion, hourly aggregation per cluster,
//! and short-gap interpolation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples per hour at 5-minute granularity.
pub const SAMPLES_PER_HOUR: usize = 12;
pub const SAMPLE_SECONDS: i64 = 300;

/// Header of the telemetry CSV, in column order.
pub const TELEMETRY_HEADER: [&str; 7] =
    ["timestamp", "pd_id", "cluster_id", "tier", "cpu_usage_gcu", "cpu_reserved_gcu", "power_kw"];

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("telemetry header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("unknown pd_id `{0}` (not present in topology)")]
    UnknownPd(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Flexible,
    Inflexible,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Flexible => "flexible",
            Tier::Inflexible => "inflexible",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flexible" => Ok(Tier::Flexible),
            "inflexible" => Ok(Tier::Inflexible),
            other => Err(format!("unknown tier `{other}`")),
        }
    }
}

/// One 5-minute telemetry row for a power domain and tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    pub timestamp: DateTime<Utc>,
    pub pd_id: String,
    pub cluster_id: String,
    pub tier: Tier,
    pub cpu_usage: f64,
    pub cpu_reserved: f64,
    /// Per-PD total power; only present on inflexible rows.
    pub power: Option<f64>,
}

impl UsageSample {
    /// Reservations are expected to upper-bound usage; this is reported, never corrected.
    pub fn reservation_violation(&self) -> bool {
        self.cpu_reserved < self.cpu_usage
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub cluster_id: String,
    pub campus_id: String,
    pub grid_zone: String,
    pub pd_ids: Vec<String>,
    #[serde(rename = "machine_capacity_gcu")]
    pub machine_capacity: f64,
    #[serde(rename = "power_cap_usage_gcu")]
    pub power_cap_usage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampusContract {
    pub campus_id: String,
    #[serde(rename = "power_limit_kw")]
    pub power_limit: f64,
}

/// Fleet topology plus campus power contracts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub clusters: Vec<ClusterTopology>,
    #[serde(default)]
    pub campuses: Vec<CampusContract>,
}

impl Topology {
    pub fn load(path: &Path) -> Result<Self, TelemetryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TelemetryError::Io { path: path.display().to_string(), source })?;
        let topo: Topology = serde_json::from_str(&text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        let mut seen = HashSet::new();
        let mut clusters = HashSet::new();
        for c in &self.clusters {
            if !clusters.insert(c.cluster_id.as_str()) {
                return Err(TelemetryError::Topology(format!("duplicate cluster `{}`", c.cluster_id)));
            }
            if c.pd_ids.is_empty() {
                return Err(TelemetryError::Topology(format!("cluster `{}` has no power domains", c.cluster_id)));
            }
            if !(c.machine_capacity > 0.0) {
                return Err(TelemetryError::Topology(format!(
                    "cluster `{}`: machine capacity must be positive",
                    c.cluster_id
                )));
            }
            if !(c.power_cap_usage <= c.machine_capacity) {
                return Err(TelemetryError::Topology(format!(
                    "cluster `{}`: power cap usage exceeds machine capacity",
                    c.cluster_id
                )));
            }
            for pd in &c.pd_ids {
                if !seen.insert(pd.as_str()) {
                    return Err(TelemetryError::Topology(format!("pd `{pd}` appears in more than one cluster")));
                }
            }
        }
        for campus in &self.campuses {
            if !(campus.power_limit > 0.0) {
                return Err(TelemetryError::Topology(format!(
                    "campus `{}`: power limit must be positive",
                    campus.campus_id
                )));
            }
        }
        Ok(())
    }

    pub fn cluster(&self, cluster_id: &str) -> Option<&ClusterTopology> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    pub fn contract(&self, campus_id: &str) -> Option<&CampusContract> {
        self.campuses.iter().find(|c| c.campus_id == campus_id)
    }

    /// Map from PD to owning cluster.
    pub fn pd_index(&self) -> HashMap<&str, &str> {
        self.clusters.iter().flat_map(|c| c.pd_ids.iter().map(move |pd| (pd.as_str(), c.cluster_id.as_str()))).collect()
    }
}

/// Fixed-offset local hour labels. The offset is whole hours east of UTC
/// (PST is -8); no daylight-saving shifts are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourLabeler {
    pub utc_offset_hours: i32,
}

impl Default for HourLabeler {
    fn default() -> Self {
        Self { utc_offset_hours: -8 }
    }
}

impl HourLabeler {
    pub fn new(utc_offset_hours: i32) -> Self {
        Self { utc_offset_hours }
    }

    /// Hours since the local epoch for the hour containing `ts`.
    pub fn hour_label(&self, ts: DateTime<Utc>) -> i64 {
        (ts.timestamp() + self.utc_offset_hours as i64 * 3600).div_euclid(3600)
    }

    /// UTC instant at the start of a labeled hour.
    pub fn hour_start_utc(&self, label: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(label * 3600 - self.utc_offset_hours as i64 * 3600, 0)
            .expect("hour label within chrono range")
    }

    pub fn date_of(&self, label: i64) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(label.div_euclid(24) as i32 + EPOCH_CE_DAYS).expect("date within range")
    }

    /// Label of hour 0 of a local calendar date.
    pub fn first_hour_of(&self, date: NaiveDate) -> i64 {
        (date.num_days_from_ce() - EPOCH_CE_DAYS) as i64 * 24
    }
}

/// `NaiveDate::num_days_from_ce` of 1970-01-01.
const EPOCH_CE_DAYS: i32 = 719_163;

/// Hourly cluster aggregates. All values in GCU except `power` (kW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyValues {
    pub u_inflexible: f64,
    pub u_flexible: f64,
    pub r_inflexible: f64,
    pub r_flexible: f64,
    pub power: f64,
}

impl HourlyValues {
    pub fn usage(&self) -> f64 {
        self.u_inflexible + self.u_flexible
    }

    pub fn reservations(&self) -> f64 {
        self.r_inflexible + self.r_flexible
    }

    fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        let f = |x: f64, y: f64| x + (y - x) * t;
        Self {
            u_inflexible: f(a.u_inflexible, b.u_inflexible),
            u_flexible: f(a.u_flexible, b.u_flexible),
            r_inflexible: f(a.r_inflexible, b.r_inflexible),
            r_flexible: f(a.r_flexible, b.r_flexible),
            power: f(a.power, b.power),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyPoint {
    /// Local hour label (see [`HourLabeler`]).
    pub hour: i64,
    /// `None` marks a gap.
    pub values: Option<HourlyValues>,
    #[serde(default)]
    pub interpolated: bool,
}

/// Contiguous hourly series for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyClusterSeries {
    pub cluster_id: String,
    pub points: Vec<HourlyPoint>,
}

impl HourlyClusterSeries {
    pub fn first_hour(&self) -> Option<i64> {
        self.points.first().map(|p| p.hour)
    }

    pub fn gap_count(&self) -> usize {
        self.points.iter().filter(|p| p.values.is_none()).count()
    }

    pub fn to_json(&self) -> Result<String, TelemetryError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, TelemetryError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    timestamp: String,
    pd_id: String,
    cluster_id: String,
    tier: String,
    cpu_usage_gcu: String,
    cpu_reserved_gcu: String,
    power_kw: String,
}

fn parse_nonneg(field: &str, name: &str, row: usize) -> Result<f64, TelemetryError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| TelemetryError::Row { row, msg: format!("{name}: `{field}` is not numeric") })?;
    if !v.is_finite() || v < 0.0 {
        return Err(TelemetryError::Row {
            row,
            msg: format!("{name}: `{field}` must be a finite non-negative number"),
        });
    }
    Ok(v)
}

/// Parses a telemetry CSV from any reader. Row numbers in errors are 1-based
/// data rows (the header is row 0).
pub fn parse_samples<R: std::io::Read>(reader: R) -> Result<Vec<UsageSample>, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != TELEMETRY_HEADER {
        return Err(TelemetryError::Header { expected: TELEMETRY_HEADER.join(","), found: found.join(",") });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
        let row = i + 1;
        let raw = rec.map_err(|e| TelemetryError::Row { row, msg: e.to_string() })?;
        let timestamp = DateTime::parse_from_rfc3339(raw.timestamp.trim())
            .map_err(|e| TelemetryError::Row { row, msg: format!("timestamp `{}`: {e}", raw.timestamp) })?
            .with_timezone(&Utc);
        if timestamp.timestamp().rem_euclid(SAMPLE_SECONDS) != 0 || timestamp.nanosecond() != 0 {
            return Err(TelemetryError::Row { row, msg: format!("timestamp {timestamp} is not on the 5-minute grid") });
        }
        let tier: Tier = raw.tier.trim().parse().map_err(|msg| TelemetryError::Row { row, msg })?;
        let cpu_usage = parse_nonneg(&raw.cpu_usage_gcu, "cpu_usage_gcu", row)?;
        let cpu_reserved = parse_nonneg(&raw.cpu_reserved_gcu, "cpu_reserved_gcu", row)?;
        let power = match (tier, raw.power_kw.trim()) {
            (_, "") => None,
            (Tier::Inflexible, p) => Some(parse_nonneg(p, "power_kw", row)?),
            (Tier::Flexible, _) => {
                return Err(TelemetryError::Row { row, msg: "power_kw must be blank on flexible rows".into() })
            }
        };
        out.push(UsageSample {
            timestamp,
            pd_id: raw.pd_id.trim().to_string(),
            cluster_id: raw.cluster_id.trim().to_string(),
            tier,
            cpu_usage,
            cpu_reserved,
            power,
        });
    }
    // stable: equal timestamps keep file order
    out.sort_by_key(|s| s.timestamp);
    Ok(out)
}

pub fn load_samples(path: &Path) -> Result<Vec<UsageSample>, TelemetryError> {
    let file =
        std::fs::File::open(path).map_err(|source| TelemetryError::Io { path: path.display().to_string(), source })?;
    parse_samples(std::io::BufReader::new(file))
}

pub fn write_samples<W: std::io::Write>(writer: W, samples: &[UsageSample]) -> Result<(), TelemetryError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TELEMETRY_HEADER)?;
    for s in samples {
        w.write_record([
            s.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            s.pd_id.clone(),
            s.cluster_id.clone(),
            s.tier.as_str().to_string(),
            format!("{}", s.cpu_usage),
            format!("{}", s.cpu_reserved),
            s.power.map(|p| format!("{p}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|source| TelemetryError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

#[derive(Default, Clone, Copy)]
struct Acc {
    usage: f64,
    reserved: f64,
    n: usize,
}

#[derive(Default)]
struct PdHour {
    flexible: Acc,
    inflexible: Acc,
    power_sum: f64,
    power_n: usize,
}

/// Aggregates 5-minute samples into hourly per-cluster series.
///
/// For every PD, each hour's value is the mean of its twelve samples; cluster
/// values are sums over PDs. An hour is a gap when any PD of the cluster is
/// missing samples for either tier or its power readings. Samples for a
/// cluster span from its first to its last observed hour.
pub fn aggregate_hourly(
    samples: &[UsageSample],
    topology: &Topology,
    labeler: HourLabeler,
) -> Result<Vec<HourlyClusterSeries>, TelemetryError> {
    let pd_index = topology.pd_index();
    // cluster -> hour -> pd -> accumulators
    let mut acc: BTreeMap<&str, BTreeMap<i64, HashMap<&str, PdHour>>> = BTreeMap::new();
    for s in samples {
        let cluster = *pd_index.get(s.pd_id.as_str()).ok_or_else(|| TelemetryError::UnknownPd(s.pd_id.clone()))?;
        let hour = labeler.hour_label(s.timestamp);
        let slot = acc.entry(cluster).or_default().entry(hour).or_default().entry(s.pd_id.as_str()).or_default();
        let tier_acc = match s.tier {
            Tier::Flexible => &mut slot.flexible,
            Tier::Inflexible => &mut slot.inflexible,
        };
        tier_acc.usage += s.cpu_usage;
        tier_acc.reserved += s.cpu_reserved;
        tier_acc.n += 1;
        if let Some(p) = s.power {
            slot.power_sum += p;
            slot.power_n += 1;
        }
    }

    let mut out = Vec::new();
    for (cluster_id, hours) in acc {
        let topo = topology.cluster(cluster_id).expect("cluster from pd index");
        let (Some(&first), Some(&last)) = (hours.keys().next(), hours.keys().next_back()) else {
            continue;
        };
        let mut points = Vec::with_capacity((last - first + 1) as usize);
        for hour in first..=last {
            let values = hours.get(&hour).and_then(|pds| {
                let mut v =
                    HourlyValues { u_inflexible: 0.0, u_flexible: 0.0, r_inflexible: 0.0, r_flexible: 0.0, power: 0.0 };
                for pd in &topo.pd_ids {
                    let h = pds.get(pd.as_str())?;
                    if h.flexible.n != SAMPLES_PER_HOUR
                        || h.inflexible.n != SAMPLES_PER_HOUR
                        || h.power_n != SAMPLES_PER_HOUR
                    {
                        return None;
                    }
                    let n = SAMPLES_PER_HOUR as f64;
                    v.u_inflexible += h.inflexible.usage / n;
                    v.r_inflexible += h.inflexible.reserved / n;
                    v.u_flexible += h.flexible.usage / n;
                    v.r_flexible += h.flexible.reserved / n;
                    v.power += h.power_sum / n;
                }
                Some(v)
            });
            points.push(HourlyPoint { hour, values, interpolated: false });
        }
        out.push(HourlyClusterSeries { cluster_id: cluster_id.to_string(), points });
    }
    Ok(out)
}

/// Linearly interpolates interior gaps of at most `max_gap_hours` and flags
/// them; longer gaps and gaps touching either end stay missing.
pub fn fill_gaps(series: &HourlyClusterSeries, max_gap_hours: usize) -> HourlyClusterSeries {
    let mut out = series.clone();
    let pts = &mut out.points;
    let mut i = 0;
    while i < pts.len() {
        if pts[i].values.is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < pts.len() && pts[i].values.is_none() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == pts.len() || len > max_gap_hours {
            continue;
        }
        let left = pts[start - 1].values.expect("observed left neighbor");
        let right = pts[i].values.expect("observed right neighbor");
        for (k, p) in pts[start..i].iter_mut().enumerate() {
            let t = (k + 1) as f64 / (len + 1) as f64;
            p.values = Some(HourlyValues::lerp(&left, &right, t));
            p.interpolated = true;
        }
    }
    out
}

/// Joined per-PD (usage, power) observation at one 5-minute timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdObservation {
    pub timestamp: DateTime<Utc>,
    /// Total (flexible + inflexible) usage of the PD.
    pub usage: f64,
    pub power: f64,
}

/// Joins tier rows per PD into (usage, power) pairs. Timestamps missing either
/// tier or the power reading are skipped.
pub fn pd_observations(samples: &[UsageSample]) -> BTreeMap<String, Vec<PdObservation>> {
    #[derive(Default)]
    struct Partial {
        flex: Option<f64>,
        inflex: Option<f64>,
        power: Option<f64>,
    }
    let mut grid: BTreeMap<&str, BTreeMap<DateTime<Utc>, Partial>> = BTreeMap::new();
    for s in samples {
        let p = grid.entry(s.pd_id.as_str()).or_default().entry(s.timestamp).or_default();
        match s.tier {
            Tier::Flexible => p.flex = Some(s.cpu_usage),
            Tier::Inflexible => {
                p.inflex = Some(s.cpu_usage);
                p.power = s.power;
            }
        }
    }
    grid.into_iter()
        .map(|(pd, rows)| {
            let obs = rows
                .into_iter()
                .filter_map(|(timestamp, p)| {
                    Some(PdObservation { timestamp, usage: p.flex? + p.inflex?, power: p.power? })
                })
                .collect();
            (pd.to_string(), obs)
        })
        .collect()
}

/// Per-PD usage series for the PDs of each cluster, aligned on timestamps
/// where every PD of the cluster reported both tiers.
pub fn cluster_pd_usage(
    samples: &[UsageSample],
    topology: &Topology,
) -> BTreeMap<String, (Vec<String>, Vec<Vec<f64>>)> {
    let obs = pd_observations(samples);
    let mut out = BTreeMap::new();
    for c in &topology.clusters {
        let mut by_ts: BTreeMap<DateTime<Utc>, Vec<Option<f64>>> = BTreeMap::new();
        for (k, pd) in c.pd_ids.iter().enumerate() {
            for o in obs.get(pd).into_iter().flatten() {
                by_ts.entry(o.timestamp).or_insert_with(|| vec![None; c.pd_ids.len()])[k] = Some(o.usage);
            }
        }
        let rows: Vec<Vec<f64>> =
            by_ts.into_values().filter_map(|row| row.into_iter().collect::<Option<Vec<f64>>>()).collect();
        out.insert(c.cluster_id.clone(), (c.pd_ids.clone(), rows));
    }
    out
}
