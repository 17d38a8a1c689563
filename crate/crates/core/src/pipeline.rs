//! The daily run: ingest, fit, forecast, align carbon, optimize, emit VCCs.
//! Also the simulate, experiment and report steps behind the CLI.
//!
//! Everything lands under `<output>/<date>/{models,forecasts,plan,sim,report}`.
//! Each JSON artifact carries the run config, its hash and SHA-256 digests
//! of the inputs; `manifest.json` lists every file with its digest. Stage
//! failures turn into per-cluster fallbacks; only unreadable telemetry or
//! topology fails the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::carbon::{align_to_planning_day, parse_carbon_forecast, CarbonSource, DirectorySource};
use crate::config::RunConfig;
use crate::forecasting::{daily_records, DayAheadForecast, DayRecord, RollingForecaster};
use crate::power_model::{
    compute_fractions, fit_pd_model, fit_pd_model_auto, ClusterFractions, ClusterPowerSensitivity, ModelStore,
    PiecewisePowerModel,
};
use crate::simulator::{
    evaluate_day, jobs_of_day, read_trace, run_day, run_experiment, ClusterState, ExperimentSummary, ImpactMetrics,
    SimulationReport,
};
use crate::synthetic::{default_campus, FleetSpec};
use crate::telemetry::{
    aggregate_hourly, cluster_pd_usage, fill_gaps, load_samples, pd_observations, HourLabeler, Topology, UsageSample,
};
use crate::vcc::{check_slo, plan_day, ClusterCandidate, DayPlan, PlanRequest, SloState, VccOutput};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("telemetry: {0}")]
    Telemetry(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("no complete telemetry day to plan from")]
    NoHistory,
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub config: RunConfig,
    pub date: Option<NaiveDate>,
    /// Input name to SHA-256 digest.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub meta: ArtifactMeta,
    pub data: T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Digest over the sorted names and contents of a directory's files.
fn digest_dir(path: &Path) -> std::io::Result<String> {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    entries.sort();
    let mut h = Sha256::new();
    for p in entries {
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update(std::fs::read(&p)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects written files for the manifest.
struct Writer {
    root: PathBuf,
    meta: ArtifactMeta,
    files: BTreeMap<String, String>,
}

impl Writer {
    fn new(root: PathBuf, meta: ArtifactMeta) -> Self {
        Self { root, meta, files: BTreeMap::new() }
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, data: &T) -> Result<PathBuf, PipelineError> {
        let art = Artifact { meta: self.meta.clone(), data };
        let mut text = serde_json::to_string_pretty(&art).expect("artifact serializes");
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    fn finish(mut self) -> Result<BTreeMap<String, String>, PipelineError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            config_hash: &'a str,
            inputs: &'a BTreeMap<String, String>,
            files: &'a BTreeMap<String, String>,
        }
        // merge with files from earlier steps of the same run
        let path = self.root.join("manifest.json");
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
                if let Some(files) = v.get("files").and_then(|f| f.as_object()) {
                    for (k, d) in files {
                        if let Some(d) = d.as_str() {
                            self.files.entry(k.clone()).or_insert_with(|| d.to_string());
                        }
                    }
                }
            }
        }
        let m = Manifest { config_hash: &self.meta.config_hash, inputs: &self.meta.inputs, files: &self.files };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        std::fs::create_dir_all(&self.root)?;
        std::fs::write(path, text)?;
        Ok(self.files)
    }
}

fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })
}

/// Telemetry, topology and the hourly day records derived from them.
pub struct Ingested {
    pub topology: Topology,
    pub samples: Vec<UsageSample>,
    pub days: BTreeMap<String, Vec<DayRecord>>,
    pub inputs: BTreeMap<String, String>,
}

pub fn ingest(config: &RunConfig) -> Result<Ingested, PipelineError> {
    let p = &config.paths;
    let topology = Topology::load(&p.topology).map_err(|e| PipelineError::Topology(e.to_string()))?;
    topology.validate().map_err(|e| PipelineError::Topology(e.to_string()))?;
    if !p.telemetry.is_file() {
        return Err(PipelineError::Telemetry(format!("{} not found", p.telemetry.display())));
    }
    let samples = load_samples(&p.telemetry).map_err(|e| PipelineError::Telemetry(e.to_string()))?;
    if samples.is_empty() {
        return Err(PipelineError::Telemetry(format!("{} holds no samples", p.telemetry.display())));
    }
    let labeler = HourLabeler::new(config.utc_offset_hours);
    let series = aggregate_hourly(&samples, &topology, labeler).map_err(|e| PipelineError::Telemetry(e.to_string()))?;
    let days = series
        .iter()
        .map(|s| (s.cluster_id.clone(), daily_records(&fill_gaps(s, config.max_gap_hours), labeler)))
        .collect();
    let mut inputs = BTreeMap::new();
    inputs.insert("telemetry".into(), digest_file(&p.telemetry)?);
    inputs.insert("topology".into(), digest_file(&p.topology)?);
    if p.carbon.is_dir() {
        inputs.insert("carbon".into(), digest_dir(&p.carbon)?);
    }
    Ok(Ingested { topology, samples, days, inputs })
}

/// Day after the last complete telemetry day of any cluster.
pub fn default_planning_date(ing: &Ingested) -> Option<NaiveDate> {
    ing.days.values().filter_map(|d| d.last()).map(|d| d.date).max().and_then(|d| d.succ_opt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdFitRecord {
    pub pd_id: String,
    pub cluster_id: String,
    pub segments: Option<usize>,
    /// Held-out MAPE as a fraction.
    pub mape: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStage {
    pub store: ModelStore,
    pub pds: Vec<PdFitRecord>,
    pub cluster_errors: BTreeMap<String, String>,
}

impl PowerStage {
    pub fn sensitivity(&self, cluster_id: &str) -> Result<ClusterPowerSensitivity, String> {
        if let Some(e) = self.cluster_errors.get(cluster_id) {
            return Err(e.clone());
        }
        self.store.sensitivity(cluster_id).map_err(|e| e.to_string())
    }
}

/// Fits every PD of the topology and the cluster usage fractions. Fit
/// failures mark the PD's cluster as unmodeled.
pub fn fit_power(ing: &Ingested, config: &RunConfig) -> PowerStage {
    let obs = pd_observations(&ing.samples);
    let jobs: Vec<(&str, &str)> = ing
        .topology
        .clusters
        .iter()
        .flat_map(|c| c.pd_ids.iter().map(move |pd| (c.cluster_id.as_str(), pd.as_str())))
        .collect();
    let fits: Vec<(PdFitRecord, Option<PiecewisePowerModel>)> = jobs
        .par_iter()
        .map(|&(cluster, pd)| {
            let data = obs.get(pd).map(Vec::as_slice).unwrap_or(&[]);
            let fit = match config.power.segments {
                Some(n) => fit_pd_model(pd, data, n),
                None => fit_pd_model_auto(pd, data),
            };
            match fit {
                Ok(m) => (
                    PdFitRecord {
                        pd_id: pd.into(),
                        cluster_id: cluster.into(),
                        segments: Some(m.n_segments()),
                        mape: Some(m.fit_mape),
                        error: None,
                    },
                    Some(m),
                ),
                Err(e) => (
                    PdFitRecord {
                        pd_id: pd.into(),
                        cluster_id: cluster.into(),
                        segments: None,
                        mape: None,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let mut cluster_errors = BTreeMap::new();
    for (r, _) in &fits {
        if let Some(e) = &r.error {
            log::warn!("{}: power model for {} failed: {e}", r.cluster_id, r.pd_id);
            cluster_errors.entry(r.cluster_id.clone()).or_insert_with(|| format!("PD {}: {e}", r.pd_id));
        }
    }
    let usage = cluster_pd_usage(&ing.samples, &ing.topology);
    let mut clusters = Vec::new();
    for c in &ing.topology.clusters {
        let Some((ids, rows)) = usage.get(&c.cluster_id) else { continue };
        match compute_fractions(ids, rows) {
            Ok(fr) => clusters.push(ClusterFractions {
                cluster_id: c.cluster_id.clone(),
                fractions: fr.into_iter().map(|f| (f.pd_id, f.lambda)).collect(),
            }),
            Err(e) => {
                cluster_errors.entry(c.cluster_id.clone()).or_insert_with(|| e.to_string());
            }
        }
    }
    let pds = fits.iter().map(|(r, _)| r.clone()).collect();
    let pd_models = fits.into_iter().filter_map(|(_, m)| m).collect();
    PowerStage { store: ModelStore { pd_models, clusters }, pds, cluster_errors }
}

/// History of the days strictly before `date`, which must end on the day
/// before it.
fn history_before(days: &[DayRecord], date: NaiveDate) -> Result<&[DayRecord], String> {
    let end = days.partition_point(|d| d.date < date);
    let hist = &days[..end];
    match hist.last() {
        Some(d) if d.date.succ_opt() == Some(date) => Ok(hist),
        Some(d) => Err(format!("telemetry history ends on {}, planning {date} needs the day before", d.date)),
        None => Err(format!("no complete telemetry day before {date}")),
    }
}

pub fn forecast_clusters(
    ing: &Ingested,
    config: &RunConfig,
    date: NaiveDate,
) -> BTreeMap<String, Result<DayAheadForecast, String>> {
    let ids: Vec<&str> = ing.topology.clusters.iter().map(|c| c.cluster_id.as_str()).collect();
    ids.par_iter()
        .map(|&id| {
            let res = ing
                .days
                .get(id)
                .ok_or_else(|| "no telemetry".to_string())
                .and_then(|d| history_before(d, date))
                .and_then(|hist| {
                    RollingForecaster::from_history(id, config.forecast, hist).forecast().map_err(|e| e.to_string())
                });
            if let Err(e) = &res {
                log::warn!("{id}: forecast failed: {e}");
            }
            (id.to_string(), res)
        })
        .collect()
}

/// Hourly intensities of the planning day per zone used by the topology.
pub fn align_carbon(
    topology: &Topology,
    config: &RunConfig,
    date: NaiveDate,
) -> BTreeMap<String, Result<Vec<f64>, String>> {
    let labeler = HourLabeler::new(config.utc_offset_hours);
    let now = labeler.hour_start_utc(labeler.first_hour_of(date));
    let source = DirectorySource::new(&config.paths.carbon).with_staleness_hours(config.carbon_staleness_hours);
    let mut zones: Vec<&str> = topology.clusters.iter().map(|c| c.grid_zone.as_str()).collect();
    zones.sort_unstable();
    zones.dedup();
    zones
        .into_iter()
        .map(|z| {
            let r = source
                .fetch_latest(z, now)
                .and_then(|f| align_to_planning_day(&f, date, labeler))
                .map_err(|e| e.to_string());
            if let Err(e) = &r {
                log::warn!("carbon for zone {z} unavailable: {e}; its clusters fall back");
            }
            (z.to_string(), r)
        })
        .collect()
}

fn run_root(config: &RunConfig, date: NaiveDate) -> PathBuf {
    config.paths.output.join(date.to_string())
}

/// SLO state after scoring the previous day's plan against its realized
/// reservations. Missing previous artifacts start fresh.
fn slo_states(
    ing: &Ingested,
    config: &RunConfig,
    date: NaiveDate,
    inputs: &mut BTreeMap<String, String>,
) -> BTreeMap<String, SloState> {
    let mut states: BTreeMap<String, SloState> =
        ing.topology.clusters.iter().map(|c| (c.cluster_id.clone(), SloState::new(c.cluster_id.clone()))).collect();
    let Some(prev) = date.checked_sub_days(Days::new(1)) else { return states };
    let prev_root = run_root(config, prev);
    let state_path = prev_root.join("plan/slo_state.json");
    let plan_path = prev_root.join("plan/plan.json");
    if let Ok(a) = read_artifact::<BTreeMap<String, SloState>>(&state_path) {
        if let Ok(d) = digest_file(&state_path) {
            inputs.insert("previous_slo_state".into(), d);
        }
        states.extend(a.data);
    }
    let Ok(mut plan) = read_artifact::<DayPlan>(&plan_path) else { return states };
    if let Ok(d) = digest_file(&plan_path) {
        inputs.insert("previous_plan".into(), d);
    }
    plan.data.restore_curves();
    for curve in &plan.data.curves {
        let actual = ing
            .days
            .get(&curve.cluster_id)
            .and_then(|d| d.iter().find(|r| r.date == prev))
            .map(DayRecord::reservation_total);
        if let (Some(actual), Some(s)) = (actual, states.get(&curve.cluster_id)) {
            let next = check_slo(actual, curve, s, config.simulator.slo_threshold);
            states.insert(curve.cluster_id.clone(), next);
        }
    }
    states
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    FitPower,
    Forecast,
    Plan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub date: NaiveDate,
    pub root: PathBuf,
    pub files: BTreeMap<String, String>,
    pub plan: Option<DayPlan>,
    pub power_failures: usize,
    pub forecast_failures: usize,
}

fn meta(config: &RunConfig, date: Option<NaiveDate>, inputs: BTreeMap<String, String>) -> ArtifactMeta {
    ArtifactMeta { config_hash: config.hash(), config: config.clone(), date, inputs }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("worker pool unavailable ({e}); using the global pool");
            f()
        }
    }
}

/// Runs the stages up to and including `until` for `date` (default: the
/// day after the last complete telemetry day).
pub fn run_pipeline(
    config: &RunConfig,
    date: Option<NaiveDate>,
    until: Stage,
) -> Result<PipelineOutcome, PipelineError> {
    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    with_pool(config.workers, || run_stages(config, date, until))
}

fn run_stages(config: &RunConfig, date: Option<NaiveDate>, until: Stage) -> Result<PipelineOutcome, PipelineError> {
    let ing = ingest(config)?;
    let date = date.or_else(|| default_planning_date(&ing)).ok_or(PipelineError::NoHistory)?;
    let root = run_root(config, date);
    let mut inputs = ing.inputs.clone();
    let slo = if until == Stage::Plan { slo_states(&ing, config, date, &mut inputs) } else { BTreeMap::new() };
    let mut w = Writer::new(root.clone(), meta(config, Some(date), inputs));
    let mut outcome = PipelineOutcome {
        date,
        root: root.clone(),
        files: BTreeMap::new(),
        plan: None,
        power_failures: 0,
        forecast_failures: 0,
    };

    let power = (until != Stage::Forecast).then(|| fit_power(&ing, config));
    if let Some(p) = &power {
        outcome.power_failures = p.pds.iter().filter(|r| r.error.is_some()).count();
        w.write_json("models/power_models.json", &p.store)?;
        w.write_json("models/fit_report.json", &p.pds)?;
    }
    if until == Stage::FitPower {
        outcome.files = w.finish()?;
        return Ok(outcome);
    }

    let forecasts = forecast_clusters(&ing, config, date);
    outcome.forecast_failures = forecasts.values().filter(|f| f.is_err()).count();
    let rendered: BTreeMap<&String, serde_json::Value> = forecasts
        .iter()
        .map(|(k, v)| {
            let v = match v {
                Ok(f) => serde_json::json!({ "forecast": f }),
                Err(e) => serde_json::json!({ "error": e }),
            };
            (k, v)
        })
        .collect();
    w.write_json("forecasts/forecasts.json", &rendered)?;
    if until == Stage::Forecast {
        outcome.files = w.finish()?;
        return Ok(outcome);
    }

    let power = power.expect("fitted for the plan stage");
    let carbon = align_carbon(&ing.topology, config, date);
    let carbon_out: BTreeMap<&String, serde_json::Value> = carbon
        .iter()
        .map(|(z, r)| {
            let v = match r {
                Ok(eta) => serde_json::json!({ "eta_kg_per_kwh": eta }),
                Err(e) => serde_json::json!({ "error": e }),
            };
            (z, v)
        })
        .collect();
    w.write_json("plan/carbon.json", &carbon_out)?;
    let request = PlanRequest {
        date,
        run_id: format!("{date}-{}", &config.hash()[..12]),
        clusters: ing
            .topology
            .clusters
            .iter()
            .map(|c| ClusterCandidate {
                cluster_id: c.cluster_id.clone(),
                campus_id: c.campus_id.clone(),
                grid_zone: c.grid_zone.clone(),
                machine_capacity: c.machine_capacity,
                power_cap_usage: c.power_cap_usage,
                forecast: forecasts.get(&c.cluster_id).cloned().unwrap_or_else(|| Err("no forecast".into())),
                power: power.sensitivity(&c.cluster_id),
            })
            .collect(),
        campus_limits: ing.topology.campuses.iter().map(|c| (c.campus_id.clone(), c.power_limit)).collect(),
        carbon: carbon.iter().filter_map(|(z, r)| r.as_ref().ok().map(|e| (z.clone(), e.clone()))).collect(),
    };
    let plan = plan_day(&request, &config.planner, &slo).map_err(|e| PipelineError::Config(e.to_string()))?;
    w.write_json("plan/plan.json", &plan)?;
    w.write_json("plan/vcc.json", &plan.vcc_output())?;
    w.write_json("plan/slo_state.json", &slo)?;
    log::info!("{date}: {} of {} clusters shaped", plan.shaped_count(), plan.clusters.len());
    outcome.plan = Some(plan);
    outcome.files = w.finish()?;
    Ok(outcome)
}

/// Inputs of a standalone simulation.
#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub trace: PathBuf,
    pub vcc: PathBuf,
    /// A single forecast document used for every cluster, or a directory
    /// of documents resolved per zone through the configured topology.
    pub carbon: PathBuf,
    pub models: PathBuf,
    pub out: PathBuf,
    /// Trace day simulated under the VCCs; earlier days run unconstrained
    /// to build the queue and running set.
    pub day: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSimSummary {
    pub cluster_id: String,
    pub mode: crate::vcc::CurveMode,
    pub flexible_gcu_hours_completed: f64,
    pub flexible_jobs_completed: usize,
    pub late_completions: usize,
    pub overdue_pending: usize,
    pub peak_power_kw: f64,
    pub total_emissions_kg: f64,
    pub reservation_demand_gcu_hours: f64,
    /// Against the same day run without shaping.
    pub impact: ImpactMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub date: NaiveDate,
    pub day: u64,
    pub clusters: Vec<ClusterSimSummary>,
}

/// Reads `T` from an artifact wrapper or as bare JSON.
fn load_data<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })?;
    if let Ok(a) = serde_json::from_str::<Artifact<T>>(&text) {
        return Ok(a.data);
    }
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })
}

/// Simulates every cluster present in both the trace and the VCC file,
/// shaped and unshaped, and writes `<out>/<cluster>.csv` and
/// `<out>/summary.json`.
pub fn simulate(config: &RunConfig, args: &SimulateArgs) -> Result<SimSummary, PipelineError> {
    let art = |path: &Path, e: String| PipelineError::Artifact { path: path.to_path_buf(), message: e };
    let vcc: VccOutput = load_data(&args.vcc)?;
    let file = std::fs::File::open(&args.trace).map_err(|e| art(&args.trace, e.to_string()))?;
    let traces = read_trace(std::io::BufReader::new(file)).map_err(|e| art(&args.trace, e.to_string()))?;
    let models: ModelStore = load_data(&args.models)?;
    let mut inputs = BTreeMap::new();
    for (k, p) in [("trace", &args.trace), ("vcc", &args.vcc), ("models", &args.models)] {
        inputs.insert(k.to_string(), digest_file(p)?);
    }
    let entries: Vec<_> = vcc.clusters.iter().filter(|e| traces.contains_key(&e.cluster_id)).collect();
    if entries.is_empty() {
        return Err(PipelineError::Simulation("no cluster appears in both the trace and the VCC file".into()));
    }
    let labeler = HourLabeler::new(config.utc_offset_hours);
    let mut etas: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if args.carbon.is_dir() {
        // one forecast per zone, zones from the configured topology
        inputs.insert("carbon".into(), digest_dir(&args.carbon)?);
        let topology = Topology::load(&config.paths.topology).map_err(|e| PipelineError::Topology(e.to_string()))?;
        let dir_config = RunConfig {
            paths: crate::config::PathsConfig { carbon: args.carbon.clone(), ..config.paths.clone() },
            ..config.clone()
        };
        let zones = align_carbon(&topology, &dir_config, vcc.date);
        for e in &entries {
            let zone = topology
                .clusters
                .iter()
                .find(|c| c.cluster_id == e.cluster_id)
                .map(|c| c.grid_zone.clone())
                .ok_or_else(|| PipelineError::Topology(format!("{} not in topology", e.cluster_id)))?;
            let eta = zones.get(&zone).cloned().unwrap_or_else(|| Err("no forecast".into()));
            etas.insert(e.cluster_id.clone(), eta.map_err(|m| art(&args.carbon, format!("zone {zone}: {m}")))?);
        }
    } else {
        inputs.insert("carbon".into(), digest_file(&args.carbon)?);
        let text = std::fs::read_to_string(&args.carbon).map_err(|e| art(&args.carbon, e.to_string()))?;
        let eta = parse_carbon_forecast(&text)
            .and_then(|f| align_to_planning_day(&f, vcc.date, labeler))
            .map_err(|e| art(&args.carbon, e.to_string()))?;
        for e in &entries {
            etas.insert(e.cluster_id.clone(), eta.clone());
        }
    }
    let results: Vec<(SimulationReport, ClusterSimSummary)> = entries
        .par_iter()
        .map(|e| -> Result<_, PipelineError> {
            let jobs = &traces[&e.cluster_id];
            let eta = &etas[&e.cluster_id];
            let power = models.sensitivity(&e.cluster_id).map_err(|err| art(&args.models, err.to_string()))?;
            let mut state = ClusterState::new(e.cluster_id.clone());
            let open = vec![f64::INFINITY; crate::forecasting::HOURS];
            for d in 0..args.day {
                run_day(&mut state, &open, jobs_of_day(jobs, d), eta, &power);
            }
            let mut base_state = state.clone();
            let day_jobs = jobs_of_day(jobs, args.day);
            let shaped = run_day(&mut state, &e.vcc_gcu, day_jobs, eta, &power);
            // fallback curves already are the unshaped baseline
            let cap_curve = if e.mode == crate::vcc::CurveMode::FallbackCapacity { e.vcc_gcu.clone() } else { open };
            let base = run_day(&mut base_state, &cap_curve, day_jobs, eta, &power);
            let impact = evaluate_day(&shaped, &base, config.simulator.top_k)
                .map_err(|err| PipelineError::Simulation(err.to_string()))?;
            let s = ClusterSimSummary {
                cluster_id: e.cluster_id.clone(),
                mode: e.mode,
                flexible_gcu_hours_completed: shaped.flexible_gcu_hours_completed,
                flexible_jobs_completed: shaped.flexible_jobs_completed,
                late_completions: shaped.late_completions,
                overdue_pending: shaped.overdue_pending,
                peak_power_kw: shaped.peak_power_kw,
                total_emissions_kg: shaped.total_emissions_kg,
                reservation_demand_gcu_hours: shaped.arriving_reservation_volume,
                impact,
            };
            if shaped.overdue_pending > 0 {
                log::warn!("{}: {} flexible jobs pending past 24 h", e.cluster_id, shaped.overdue_pending);
            }
            Ok((shaped, s))
        })
        .collect::<Result<_, _>>()?;
    let mut w = Writer::new(args.out.clone(), meta(config, Some(vcc.date), inputs));
    for (r, _) in &results {
        let csv = r.to_csv().map_err(|e| PipelineError::Simulation(e.to_string()))?;
        w.write_bytes(&format!("{}.csv", r.cluster_id), csv.as_bytes())?;
    }
    let summary = SimSummary { date: vcc.date, day: args.day, clusters: results.into_iter().map(|(_, s)| s).collect() };
    w.write_json("summary.json", &summary)?;
    w.finish()?;
    Ok(summary)
}

/// Runs the randomized experiment on the configured fleet (or the default
/// campus) and writes `summary.json`, `hourly.csv` and `cluster_days.csv`
/// into `out`.
pub fn experiment(config: &RunConfig, out: &Path) -> Result<ExperimentSummary, PipelineError> {
    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let exp = config.experiment_config();
    let mut inputs = BTreeMap::new();
    let fleet = match &config.paths.fleet {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Artifact { path: p.clone(), message: e.to_string() })?;
            inputs.insert("fleet".into(), sha256_hex(text.as_bytes()));
            FleetSpec::from_toml(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        }
        None => default_campus(exp.warmup_days + exp.days, config.seed),
    };
    let summary = with_pool(config.workers, || run_experiment(&fleet, &exp))
        .map_err(|e| PipelineError::Simulation(e.to_string()))?;
    let mut w = Writer::new(out.to_path_buf(), meta(config, None, inputs));
    w.write_json("summary.json", &summary)?;
    let hourly = summary.hourly_csv().map_err(|e| PipelineError::Simulation(e.to_string()))?;
    w.write_bytes("hourly.csv", hourly.as_bytes())?;
    w.write_bytes("cluster_days.csv", cluster_days_csv(&summary).as_bytes())?;
    w.finish()?;
    Ok(summary)
}

fn cluster_days_csv(s: &ExperimentSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cluster_id",
        "date",
        "treated",
        "shaped",
        "vcc_total_gcu_hours",
        "realized_reservations_gcu_hours",
        "mean_power_kw",
        "top_hours_normalized_power",
        "emissions_kg",
        "late_completions",
    ])
    .expect("in-memory csv");
    for r in &s.records {
        w.write_record([
            r.cluster_id.clone(),
            r.date.to_string(),
            r.treated.to_string(),
            r.shaped.to_string(),
            format!("{:.6}", r.vcc_total),
            format!("{:.6}", r.realized_reservations),
            format!("{:.6}", r.mean_power_kw),
            format!("{:.6}", r.top_normalized_power()),
            format!("{:.6}", r.emissions_kg),
            r.late_completions.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub const REPORT_COLUMNS: [&str; 6] =
    ["hour", "vcc_gcu", "reservations_gcu", "power_kw", "carbon_intensity_kg_per_kwh", "emissions_kg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<String>,
    pub text: String,
}

/// Renders the plan and simulation of a run directory (and optionally an
/// experiment directory) into `<run>/report/`: one 24-row CSV per cluster
/// with VCC, reservations, power, carbon intensity and emissions, the
/// experiment's per-hour treated/control table and a text summary.
pub fn report(run_dir: &Path, experiment_dir: Option<&Path>) -> Result<ReportSummary, PipelineError> {
    let plan_path = run_dir.join("plan/plan.json");
    let sim_path = run_dir.join("sim/summary.json");
    let mut missing: Vec<String> =
        [&plan_path, &sim_path].iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    let exp_path = experiment_dir.map(|d| d.join("summary.json"));
    if let Some(p) = &exp_path {
        if !p.is_file() {
            missing.push(p.display().to_string());
        }
    }
    let sim: Option<Artifact<SimSummary>> = if sim_path.is_file() { Some(read_artifact(&sim_path)?) } else { None };
    if let Some(s) = &sim {
        for c in &s.data.clusters {
            let p = run_dir.join("sim").join(format!("{}.csv", c.cluster_id));
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifacts(missing));
    }
    let mut plan: Artifact<DayPlan> = read_artifact(&plan_path)?;
    plan.data.restore_curves();
    let sim = sim.expect("checked above");
    let mut w = Writer::new(run_dir.to_path_buf(), plan.meta.clone());
    let mut text = String::new();
    text.push_str(&format!(
        "{}: {} of {} clusters shaped, objective {:.3}\n",
        plan.data.date,
        plan.data.shaped_count(),
        plan.data.clusters.len(),
        plan.data.objective
    ));
    for c in &sim.data.clusters {
        let p = run_dir.join("sim").join(format!("{}.csv", c.cluster_id));
        let mut rdr = csv::Reader::from_path(&p)
            .map_err(|e| PipelineError::Artifact { path: p.clone(), message: e.to_string() })?;
        let rows: Vec<crate::simulator::HourRecord> = rdr
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::Artifact { path: p.clone(), message: e.to_string() })?;
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(REPORT_COLUMNS).expect("in-memory csv");
        for h in &rows {
            out.write_record([
                h.hour.to_string(),
                format!("{:.6}", h.vcc_gcu),
                format!("{:.6}", h.r_inflexible + h.r_flexible),
                format!("{:.6}", h.power_kw),
                format!("{:.6}", h.eta_kg_per_kwh),
                format!("{:.6}", h.emissions_kg),
            ])
            .expect("in-memory csv");
        }
        let bytes = out.into_inner().expect("in-memory csv");
        w.write_bytes(&format!("report/{}.csv", c.cluster_id), &bytes)?;
        text.push_str(&format!(
            "  {:<12} {:?}  peak-carbon power drop {:>6.2}%  emissions {:+.1} kg  late {}\n",
            c.cluster_id, c.mode, c.impact.peak_carbon_power_drop_pct, c.impact.emissions_delta_kg, c.late_completions
        ));
    }
    if let Some(p) = exp_path {
        let exp: Artifact<ExperimentSummary> = read_artifact(&p)?;
        let csv = exp.data.hourly_csv().map_err(|e| PipelineError::Simulation(e.to_string()))?;
        w.write_bytes("report/experiment_hourly.csv", csv.as_bytes())?;
        let d = exp.data.top_carbon_difference;
        text.push_str(&format!(
            "experiment: top-carbon-hour power treated - control {:+.4} [{:+.4}, {:+.4}], {:.2}% drop\n",
            d.mean, d.lower, d.upper, exp.data.top_carbon_drop_pct
        ));
    }
    w.write_bytes("report/summary.txt", text.as_bytes())?;
    let files = w.finish()?.into_keys().filter(|k| k.starts_with("report/")).collect();
    Ok(ReportSummary { files, text })
}
