use std::path::Path;
use std::process::Command;

use cicp::config::RunConfig;
use cicp::optimizer::{ClusterStatus, FallbackReason};
use cicp::pipeline::{self, report, sha256_hex, simulate, PipelineError, SimulateArgs, Stage, REPORT_COLUMNS};
use cicp::synthetic::{default_campus, write_fixture, FixturePaths};
use cicp::vcc::DayPlan;

fn fixture(dir: &Path) -> FixturePaths {
    let mut spec = default_campus(22, 5);
    spec.clusters.truncate(3);
    write_fixture(&spec, dir).unwrap()
}

fn config(paths: &FixturePaths) -> RunConfig {
    RunConfig::load(&paths.config, std::iter::empty()).unwrap()
}

#[test]
fn plan_writes_curves_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let cfg = config(&fx);
    let out = pipeline::run_pipeline(&cfg, None, Stage::Plan).unwrap();
    assert_eq!(out.date, fx.planning_date);
    let plan = out.plan.unwrap();
    assert_eq!(plan.curves.len(), 3);
    assert!(plan.shaped_count() > 0);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.root.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    let files = manifest["files"].as_object().unwrap();
    for name in ["models/power_models.json", "forecasts/forecasts.json", "plan/plan.json", "plan/vcc.json"] {
        let bytes = std::fs::read(out.root.join(name)).unwrap();
        assert_eq!(files[name], sha256_hex(&bytes), "{name}");
    }
    assert_eq!(manifest["inputs"]["telemetry"], sha256_hex(&std::fs::read(&fx.telemetry).unwrap()));

    let art: pipeline::Artifact<DayPlan> =
        serde_json::from_str(&std::fs::read_to_string(out.root.join("plan/plan.json")).unwrap()).unwrap();
    assert_eq!(art.meta.config, cfg);
    assert_eq!(art.meta.date, Some(fx.planning_date));
}

#[test]
fn corrupt_carbon_falls_back_to_capacity() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    for e in std::fs::read_dir(&fx.carbon).unwrap() {
        std::fs::write(e.unwrap().path(), "{ not json").unwrap();
    }
    let out = pipeline::run_pipeline(&config(&fx), None, Stage::Plan).unwrap();
    let plan = out.plan.unwrap();
    assert_eq!(plan.shaped_count(), 0);
    for e in &plan.clusters {
        assert_eq!(e.status, ClusterStatus::Fallback { reason: FallbackReason::MissingCarbon });
    }
    let spec = default_campus(22, 5);
    for c in &plan.curves {
        let cap = spec.cluster(&c.cluster_id).unwrap().capacity;
        assert!(c.vcc.iter().all(|&v| v == cap));
    }
}

#[test]
fn missing_telemetry_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    std::fs::remove_file(&fx.telemetry).unwrap();
    let err = pipeline::run_pipeline(&config(&fx), None, Stage::Plan).unwrap_err();
    assert!(matches!(err, PipelineError::Telemetry(_)), "{err}");
}

#[test]
fn short_history_falls_back_per_cluster() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    // a date far past the telemetry: no cluster has the day before
    let date = fx.planning_date + chrono::Duration::days(5);
    let out = pipeline::run_pipeline(&config(&fx), Some(date), Stage::Plan).unwrap();
    let plan = out.plan.unwrap();
    assert!(plan
        .clusters
        .iter()
        .all(|e| matches!(&e.status, ClusterStatus::Fallback { reason: FallbackReason::InsufficientData(_) })));
}

#[test]
fn simulate_and_report_follow_the_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let cfg = config(&fx);
    let out = pipeline::run_pipeline(&cfg, None, Stage::Plan).unwrap();

    let missing = report(&out.root, None).unwrap_err();
    match missing {
        PipelineError::MissingArtifacts(files) => assert!(files.iter().any(|f| f.ends_with("summary.json"))),
        e => panic!("unexpected {e}"),
    }

    let args = SimulateArgs {
        trace: tmp.path().join("trace.jsonl"),
        vcc: out.root.join("plan/vcc.json"),
        carbon: fx.carbon.clone(),
        models: out.root.join("models/power_models.json"),
        out: out.root.join("sim"),
        day: 22,
    };
    let sim = simulate(&cfg, &args).unwrap();
    assert_eq!(sim.clusters.len(), 3);
    assert_eq!(sim.date, fx.planning_date);

    let r = report(&out.root, None).unwrap();
    assert_eq!(r.files.iter().filter(|f| f.ends_with(".csv")).count(), 3);
    for f in r.files.iter().filter(|f| f.ends_with(".csv")) {
        let mut rdr = csv::Reader::from_path(out.root.join(f)).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, REPORT_COLUMNS);
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 24);
        for (h, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), 6);
            assert_eq!(row[0].parse::<usize>().unwrap(), h);
            let power: f64 = row[3].parse().unwrap();
            let eta: f64 = row[4].parse().unwrap();
            let kg: f64 = row[5].parse().unwrap();
            assert!((kg - power * eta).abs() < 1e-3 * kg.max(1.0));
        }
    }
}

#[test]
fn slo_state_carries_to_the_next_day() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let cfg = config(&fx);
    let prev = fx.planning_date - chrono::Duration::days(1);
    pipeline::run_pipeline(&cfg, Some(prev), Stage::Plan).unwrap();
    let out = pipeline::run_pipeline(&cfg, None, Stage::Plan).unwrap();
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.root.join("plan/slo_state.json")).unwrap()).unwrap();
    assert!(meta["meta"]["inputs"]["previous_plan"].is_string());
    assert_eq!(meta["data"].as_object().unwrap().len(), 3);
}

fn cicp(args: &[&str], cwd: &Path, env: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cicp"));
    cmd.args(args).current_dir(cwd).env("RUST_LOG", "error");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

#[test]
fn cli_plan_honours_env_overrides_and_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let o = cicp(&["--config", "config.toml", "plan"], tmp.path(), &[("CICP_PLANNER__LAMBDA_P", "0.5")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let root = tmp.path().join("runs").join(fx.planning_date.to_string());
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("plan/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["meta"]["config"]["planner"]["lambda_p"], 0.5);

    let o = cicp(&["--config", "config.toml", "fit-power", "--out", "other"], tmp.path(), &[]);
    assert!(o.status.success());
    assert!(tmp.path().join("other").join(fx.planning_date.to_string()).join("models/fit_report.json").is_file());

    std::fs::remove_file(&fx.topology).unwrap();
    let o = cicp(&["--config", "config.toml", "plan"], tmp.path(), &[]);
    assert!(!o.status.success());

    let o = cicp(&["--config", "missing.toml", "forecast"], tmp.path(), &[]);
    assert!(!o.status.success());
}
