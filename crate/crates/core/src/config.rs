//! Run configuration: a TOML file plus `CICP_` environment overrides.
//!
//! An override names a key path with `__` between levels, so
//! `CICP_PLANNER__LAMBDA_P=2.5` sets `planner.lambda_p`. Values are parsed as
//! TOML scalars and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::forecasting::ForecastConfig;
use crate::optimizer::PlannerConfig;
use crate::simulator::ExperimentConfig;
use crate::vcc::DEFAULT_NEAR_LIMIT_FRACTION;

pub const ENV_PREFIX: &str = "CICP_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Telemetry CSV.
    pub telemetry: PathBuf,
    /// Topology JSON.
    pub topology: PathBuf,
    /// Directory of carbon forecast documents.
    pub carbon: PathBuf,
    /// Root of the run directories.
    pub output: PathBuf,
    /// Fleet spec for experiments; the default campus when absent.
    pub fleet: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            telemetry: "data/telemetry.csv".into(),
            topology: "data/topology.json".into(),
            carbon: "data/carbon".into(),
            output: "runs".into(),
            fleet: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerFitConfig {
    /// Fixed segment count; chosen per PD when absent.
    pub segments: Option<usize>,
}

impl Default for PowerFitConfig {
    fn default() -> Self {
        Self { segments: Some(crate::power_model::DEFAULT_SEGMENTS) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub top_k: usize,
    pub slo_threshold: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self { top_k: 3, slo_threshold: DEFAULT_NEAR_LIMIT_FRACTION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for per-cluster stages; 0 uses one per core.
    pub workers: usize,
    pub utc_offset_hours: i32,
    /// Longest interior telemetry gap that is interpolated.
    pub max_gap_hours: usize,
    pub carbon_staleness_hours: i64,
    pub paths: PathsConfig,
    pub power: PowerFitConfig,
    pub forecast: ForecastConfig,
    pub planner: PlannerConfig,
    pub simulator: SimulatorConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 0,
            utc_offset_hours: -8,
            max_gap_hours: 2,
            carbon_staleness_hours: crate::carbon::DEFAULT_STALENESS_HOURS,
            paths: PathsConfig::default(),
            power: PowerFitConfig::default(),
            forecast: ForecastConfig::default(),
            planner: PlannerConfig::default(),
            simulator: SimulatorConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, keys: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut t = table;
    for k in parents {
        let entry = t.entry(k.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override descends into non-table key `{k}`")))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text` and applies overrides from `env` (name, value pairs;
    /// names without the prefix are ignored).
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut overrides: Vec<(String, String)> =
            env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len()).collect();
        overrides.sort();
        for (k, v) in overrides {
            let keys: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
            if keys.iter().any(String::is_empty) {
                return Err(ConfigError::Parse(format!("malformed override `{k}`")));
            }
            set_path(&mut table, &keys, override_value(&v))?;
        }
        let config: Self =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load<I>(path: &Path, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut c = Self::from_toml_with_env(&text, env)?;
        if let Some(base) = path.parent() {
            c.resolve_paths(base);
        }
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.telemetry, &mut self.paths.topology, &mut self.paths.carbon, &mut self.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(f) = &mut self.paths.fleet {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.planner.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(n) = self.power.segments {
            if !(1..=crate::power_model::MAX_SEGMENTS).contains(&n) {
                return Err(ConfigError::Invalid(format!("power.segments must lie in 1..=3, got {n}")));
            }
        }
        if !(0.0..1.0).contains(&self.simulator.slo_threshold) || self.simulator.slo_threshold == 0.0 {
            return Err(ConfigError::Invalid("simulator.slo_threshold must lie in (0, 1)".into()));
        }
        if self.simulator.top_k == 0 || self.simulator.top_k > 24 {
            return Err(ConfigError::Invalid("simulator.top_k must lie in 1..=24".into()));
        }
        if self.carbon_staleness_hours <= 0 {
            return Err(ConfigError::Invalid("carbon_staleness_hours must be positive".into()));
        }
        Ok(())
    }

    /// Experiment settings with the run's planner, forecaster and seed.
    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig { planner: self.planner, forecast: self.forecast, seed: self.seed, ..self.experiment.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_tables() {
        let c = RunConfig::from_toml("seed = 3\n[planner]\nlambda_p = 0.5\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.planner.lambda_p, 0.5);
        assert_eq!(c.planner.lambda_e, 1.0);
        assert_eq!(c.simulator.top_k, 3);
    }

    #[test]
    fn env_overrides_nested_keys() {
        let env = vec![
            ("CICP_PLANNER__LAMBDA_P".to_string(), "2.5".to_string()),
            ("CICP_PATHS__OUTPUT".to_string(), "/tmp/out".to_string()),
            ("CICP_SEED".to_string(), "9".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = RunConfig::from_toml_with_env("[planner]\nlambda_p = 1.0\n", env).unwrap();
        assert_eq!(c.planner.lambda_p, 2.5);
        assert_eq!(c.paths.output, PathBuf::from("/tmp/out"));
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[planner]\nlambda_e = 0.0\nlambda_p = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[power]\nsegments = 5\n").is_err());
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
        let env = vec![("CICP_PLANNER__GAMMA".to_string(), "0.7".to_string())];
        assert!(RunConfig::from_toml_with_env("", env).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
