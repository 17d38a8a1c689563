use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use cicp::config::RunConfig;
use cicp::pipeline::{self, SimulateArgs, Stage};

#[derive(Parser)]
#[command(name = "cicp", version, about = "Carbon-aware day-ahead capacity planning")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration. CICP_* variables override its keys,
    /// e.g. CICP_PLANNER__LAMBDA_P=0.5.
    #[arg(long, global = true, env = "CICP_CONFIG", default_value = "cicp.toml")]
    config: PathBuf,
    /// Planning date (YYYY-MM-DD); defaults to the day after the last complete telemetry day.
    #[arg(long, global = true)]
    date: Option<NaiveDate>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (replaces paths.output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-PD power models and cluster usage fractions.
    FitPower,
    /// Day-ahead usage and reservation forecasts.
    Forecast,
    /// Full daily run: fit, forecast, align carbon, optimize, write VCCs.
    Plan,
    /// Replay a job trace under a VCC file.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        vcc: PathBuf,
        /// Carbon forecast document, or a directory of them (one zone each).
        #[arg(long)]
        carbon: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Trace day to run under the curves.
        #[arg(long, default_value_t = 0)]
        day: u64,
    },
    /// Randomized cluster-day experiment on a synthetic fleet.
    Experiment {
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        fleet: Option<PathBuf>,
    },
    /// Per-cluster hourly CSVs and a summary for a finished run.
    Report {
        /// Run directory; defaults to <output>/<date>.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        experiment: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config, std::env::vars())
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.paths.output = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.common)?;
    let date = cli.common.date;
    match cli.command {
        Command::FitPower | Command::Forecast | Command::Plan => {
            let stage = match cli.command {
                Command::FitPower => Stage::FitPower,
                Command::Forecast => Stage::Forecast,
                _ => Stage::Plan,
            };
            let out = pipeline::run_pipeline(&config, date, stage)?;
            if out.power_failures > 0 {
                log::warn!("{} power model fits failed", out.power_failures);
            }
            if out.forecast_failures > 0 {
                log::warn!("{} cluster forecasts failed", out.forecast_failures);
            }
            if let Some(plan) = &out.plan {
                println!("{}: {} of {} clusters shaped", out.date, plan.shaped_count(), plan.clusters.len());
            }
            println!("{}", out.root.display());
        }
        Command::Simulate { trace, vcc, carbon, models, day } => {
            let out = match date {
                Some(d) => config.paths.output.join(d.to_string()).join("sim"),
                None => config.paths.output.join("sim"),
            };
            let args = SimulateArgs { trace, vcc, carbon, models, out: out.clone(), day };
            let s = pipeline::simulate(&config, &args)?;
            for c in &s.clusters {
                println!(
                    "{:<12} late {:>3}  peak-carbon power drop {:>6.2}%  emissions {:+.1} kg",
                    c.cluster_id, c.late_completions, c.impact.peak_carbon_power_drop_pct, c.impact.emissions_delta_kg
                );
            }
            println!("{}", out.display());
        }
        Command::Experiment { days, fleet } => {
            if let Some(d) = days {
                config.experiment.days = d;
            }
            if fleet.is_some() {
                config.paths.fleet = fleet;
            }
            let out = config.paths.output.join("experiment");
            let s = pipeline::experiment(&config, &out)?;
            let d = s.top_carbon_difference;
            println!(
                "{} cluster-days, {} shaped; top-carbon-hour power treated - control {:+.4} [{:+.4}, {:+.4}] ({:.2}% drop)",
                s.cluster_days, s.shaped_days, d.mean, d.lower, d.upper, s.top_carbon_drop_pct
            );
            println!("{}", out.display());
        }
        Command::Report { run, experiment } => {
            let run_dir = match (run, date) {
                (Some(r), _) => r,
                (None, Some(d)) => config.paths.output.join(d.to_string()),
                (None, None) => anyhow::bail!("report needs --run or --date"),
            };
            let r = pipeline::report(&run_dir, experiment.as_deref())?;
            print!("{}", r.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
