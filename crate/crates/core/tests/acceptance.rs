//! Acceptance checks, one PASS/FAIL line each. Runs as a plain binary so the
//! lines show up in `cargo test` output; exits nonzero if any check fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cicp::config::RunConfig;
use cicp::forecasting::{
    assemble_forecast, backtest, compute_alpha, median, DayAheadForecast, ForecastConfig, ForecastErrorHistory,
    RatioModel, HOURS,
};
use cicp::optimizer::{
    check_result, decompose_by_campus, solve, solve_joint, ClusterBlock, PlanProblem, PlannerConfig,
};
use cicp::pipeline::{self, Stage};
use cicp::power_model::{
    cluster_power, cluster_sensitivity, fit_pd_model, ClusterPowerSensitivity, PiecewisePowerModel,
};
use cicp::simulator::{run_experiment, ExperimentConfig};
use cicp::synthetic::{
    archetype_fleet, default_campus, generate_day_records, generate_telemetry, pd_fleet, template_fleet, write_fixture,
    ClusterTemplate, ZoneSpec,
};
use cicp::telemetry::pd_observations;
use cicp::vcc::{check_slo, plan_day, ClusterCandidate, CurveMode, PlanRequest, SloState, VccCurve};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pct(n: usize, d: usize) -> f64 {
    100.0 * n as f64 / d.max(1) as f64
}

// 1
fn power_model_fidelity() -> Outcome {
    let spec = pd_fleet(10, 5, 14, 101);
    let t = generate_telemetry(&spec);
    let obs = pd_observations(&t.samples);
    let start = Instant::now();
    let mut good = 0;
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for c in &spec.clusters {
        for pd in &c.pds {
            total += 1;
            match fit_pd_model(&pd.pd_id, &obs[&pd.pd_id], 2) {
                Ok(m) => {
                    worst = worst.max(m.fit_mape);
                    if m.fit_mape < 0.05 {
                        good += 1;
                    }
                }
                Err(e) => eprintln!("  {}: {e}", pd.pd_id),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let share = pct(good, total);
    outcome(
        total == 50 && share >= 95.0 && secs < 30.0,
        format!(
            "{good}/{total} PDs under 5% held-out MAPE ({share:.0}%), worst {:.2}%, fit time {secs:.2} s",
            worst * 100.0
        ),
    )
}

fn random_cluster_power(rng: &mut ChaCha8Rng, id: &str) -> ClusterPowerSensitivity {
    let n = rng.random_range(1..=5);
    let mut raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|x| *x /= s);
    let members = raw
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let segs = rng.random_range(1..=3);
            let mut bps = vec![0.0];
            for _ in 1..segs {
                let last = *bps.last().unwrap();
                bps.push(last + rng.random_range(20.0..200.0));
            }
            let slopes: Vec<f64> = (0..segs).map(|_| rng.random_range(0.2..2.0)).collect();
            (PiecewisePowerModel::new(format!("{id}-pd{i}"), bps, slopes, rng.random_range(20.0..200.0)), l)
        })
        .collect();
    ClusterPowerSensitivity::new(id, members)
}

// 2
fn derivative_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let s = random_cluster_power(&mut rng, "c");
        let u = rng.random_range(1.0..1500.0);
        if s.breakpoints().iter().any(|b| (b - u).abs() < 10.0 * h) {
            continue;
        }
        let numeric = (cluster_power(&s, u + h) - cluster_power(&s, u - h)) / (2.0 * h);
        let analytic = cluster_sensitivity(&s, u);
        worst = worst.max((numeric - analytic).abs() / analytic.abs().max(1e-12));
        n += 1;
    }
    outcome(worst < 1e-6, format!("max relative derivative error {worst:.2e} over {n} points"))
}

// 3
fn forecast_backtest() -> Outcome {
    let start = Instant::now();
    let template = ClusterTemplate { daily_noise: 0.05, hourly_noise: 0.05, ..Default::default() };
    let spec = template_fleet(30, 84, 303, &template, vec![ZoneSpec::default()]);
    let days = generate_day_records(&spec);
    let mut good = 0;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (id, recs) in &days {
        let r = backtest(id, ForecastConfig::default(), recs, 28);
        let m = |v: &[f64]| median(v).unwrap_or(f64::INFINITY);
        let (a, b, c) = (m(&r.u_inflexible), m(&r.t_reservations), m(&r.ratio));
        worst = (worst.0.max(a), worst.1.max(b), worst.2.max(c));
        if a < 0.10 && b < 0.10 && c < 0.10 {
            good += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let share = pct(good, days.len());
    outcome(
        days.len() == 30 && share >= 90.0 && secs < 60.0,
        format!(
            "{good}/{} clusters with all medians under 10% ({share:.0}%); worst medians inflexible {:.1}%, reservations {:.1}%, ratio {:.1}%; {secs:.1} s",
            days.len(),
            worst.0 * 100.0,
            worst.1 * 100.0,
            worst.2 * 100.0
        ),
    )
}

fn random_forecast(rng: &mut ChaCha8Rng, id: &str, date: NaiveDate, capacity: f64) -> DayAheadForecast {
    let base = rng.random_range(0.15..0.55) * capacity;
    let amp = rng.random_range(0.0..0.25);
    let phase = rng.random_range(0.0..24.0);
    let u_if: Vec<f64> =
        (0..HOURS).map(|h| base * (1.0 + amp * ((h as f64 - phase) / 24.0 * std::f64::consts::TAU).cos())).collect();
    let t_flex = rng.random_range(0.02..0.3) * capacity * HOURS as f64;
    let ratio = RatioModel { a: rng.random_range(1.05..1.5), b: rng.random_range(-0.04..0.04) };
    let usage_total: f64 = u_if.iter().sum::<f64>() + t_flex;
    let t_res = usage_total * rng.random_range(1.0..1.4);
    let mut res_err = ForecastErrorHistory::new(id, "reservations", 90);
    let mut if_err = ForecastErrorHistory::new(id, "inflexible", 90 * HOURS);
    let spread = rng.random_range(0.01..0.25);
    for _ in 0..60 {
        res_err.push_error(rng.random_range(-spread..spread));
    }
    for _ in 0..60 * HOURS {
        if_err.push_error(rng.random_range(-0.05..0.05));
    }
    assemble_forecast(id, date, u_if, t_flex, t_res, ratio, &res_err, &if_err, &ForecastConfig::default())
        .expect("positive flexible load")
}

fn random_request(rng: &mut ChaCha8Rng, i: usize) -> PlanRequest {
    let date = NaiveDate::from_ymd_opt(2024, 5, 1).unwrap() + chrono::Duration::days(i as i64 % 300);
    let n = rng.random_range(1..=4);
    let zones = ["north", "south"];
    let clusters = (0..n)
        .map(|k| {
            let id = format!("p{i}-c{k}");
            let capacity = rng.random_range(500.0..3000.0);
            let forecast = if rng.random_bool(0.05) {
                Err("insufficient history".to_string())
            } else {
                Ok(random_forecast(rng, &id, date, capacity))
            };
            ClusterCandidate {
                cluster_id: id.clone(),
                campus_id: format!("campus{}", k % 2),
                grid_zone: zones[rng.random_range(0..zones.len())].to_string(),
                machine_capacity: capacity,
                power_cap_usage: capacity * rng.random_range(0.75..1.0),
                forecast,
                power: Ok(random_cluster_power(rng, &id)),
            }
        })
        .collect();
    let mut carbon = BTreeMap::new();
    for z in zones {
        if rng.random_bool(0.95) {
            let mean = rng.random_range(0.1..0.6);
            let peak = rng.random_range(0.0..24.0);
            carbon.insert(
                z.to_string(),
                (0..HOURS)
                    .map(|h| mean * (1.0 + 0.3 * ((h as f64 - peak) / 24.0 * std::f64::consts::TAU).cos()))
                    .collect(),
            );
        }
    }
    let mut campus_limits = BTreeMap::new();
    if rng.random_bool(0.3) {
        campus_limits.insert("campus0".to_string(), rng.random_range(500.0..5000.0));
    }
    PlanRequest { date, run_id: format!("random-{i}"), clusters, campus_limits, carbon }
}

struct PlanChecks {
    plans: usize,
    shaped: usize,
    fallback: usize,
    identity_worst: f64,
    sum_worst: f64,
    capacity_violations: usize,
    floor_violations: usize,
    fallback_mismatches: usize,
}

fn random_plans() -> PlanChecks {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut c = PlanChecks {
        plans: 0,
        shaped: 0,
        fallback: 0,
        identity_worst: 0.0,
        sum_worst: 0.0,
        capacity_violations: 0,
        floor_violations: 0,
        fallback_mismatches: 0,
    };
    let planner = PlannerConfig { lambda_p: 1.0, ..Default::default() };
    for i in 0..1000 {
        let req = random_request(&mut rng, i);
        let plan = plan_day(&req, &planner, &BTreeMap::new()).expect("valid planner config");
        c.plans += 1;
        for cand in &req.clusters {
            let curve: &VccCurve = plan.curve(&cand.cluster_id).expect("one curve per cluster");
            let cap = cand.machine_capacity;
            match curve.mode {
                CurveMode::Shaped => {
                    c.shaped += 1;
                    let f = cand.forecast.as_ref().expect("shaped implies forecast");
                    c.identity_worst = c.identity_worst.max(f.requirement_residual());
                    c.sum_worst = c.sum_worst.max((curve.total() - f.theta).abs() / f.theta);
                    if curve.vcc.iter().any(|&v| v > cap) {
                        c.capacity_violations += 1;
                    }
                    let floor = f.inflexible_floor();
                    if curve.vcc.iter().zip(&floor).any(|(v, fl)| *v < fl - 1e-9 * fl.abs().max(1.0)) {
                        c.floor_violations += 1;
                    }
                }
                CurveMode::FallbackCapacity => {
                    c.fallback += 1;
                    if curve.vcc.len() != HOURS || curve.vcc.iter().any(|&v| v != cap) {
                        c.fallback_mismatches += 1;
                    }
                }
            }
        }
    }
    c
}

// 4
fn capacity_identity(plans: &PlanChecks) -> Outcome {
    let a = compute_alpha(&[100.0; HOURS], 240.0, &[1.2; HOURS], 3326.4).expect("flexible load");
    let alpha_err = (a.alpha - 1.55).abs();
    outcome(
        plans.shaped > 0 && plans.identity_worst < 1e-9 && alpha_err <= 1e-12,
        format!(
            "max relative residual {:.2e} over {} shaped curves; worked example alpha = {} (error {alpha_err:.1e})",
            plans.identity_worst, plans.shaped, a.alpha
        ),
    )
}

// 6
fn vcc_invariants(plans: &PlanChecks) -> Outcome {
    let total = plans.shaped + plans.fallback;
    outcome(
        plans.plans == 1000
            && plans.shaped * 2 >= total
            && plans.sum_worst <= 1e-6
            && plans.capacity_violations == 0
            && plans.floor_violations == 0
            && plans.fallback_mismatches == 0,
        format!(
            "{} plans, {} shaped / {} fallback curves; max |sum - requirement| {:.2e} relative; {} above capacity, {} below floor, {} fallbacks not at capacity",
            plans.plans,
            plans.shaped,
            plans.fallback,
            plans.sum_worst,
            plans.capacity_violations,
            plans.floor_violations,
            plans.fallback_mismatches
        ),
    )
}

fn random_block(rng: &mut ChaCha8Rng, id: &str, campus: &str, constant_ratio: bool) -> ClusterBlock {
    let r0 = rng.random_range(1.0..1.6);
    ClusterBlock {
        cluster_id: id.into(),
        campus_id: campus.into(),
        eta: (0..HOURS).map(|_| rng.random_range(0.05..0.8)).collect(),
        tau_u: rng.random_range(20.0..2000.0),
        ratio: (0..HOURS).map(|_| if constant_ratio { r0 } else { rng.random_range(1.0..1.6) }).collect(),
        power: (0..HOURS).map(|_| rng.random_range(300.0..900.0)).collect(),
        sensitivity: (0..HOURS).map(|_| rng.random_range(0.2..1.5)).collect(),
        power_cap_bound: (0..HOURS).map(|_| rng.random_range(-0.5..3.0)).collect(),
        capacity_bound: (0..HOURS).map(|_| rng.random_range(0.0..3.0)).collect(),
        delta_lower: -1.0,
    }
}

fn problem(blocks: Vec<ClusterBlock>, config: PlannerConfig) -> PlanProblem {
    PlanProblem { config, blocks, campus_limits: BTreeMap::new(), excluded: BTreeMap::new() }
}

// cheapest-first fill of x(h) = 1 + delta(h) within [0, upper(h) + 1], sum x = 24
fn greedy(b: &ClusterBlock) -> f64 {
    let mut order: Vec<usize> = (0..HOURS).collect();
    order.sort_by(|&i, &j| b.carbon_slope(i).total_cmp(&b.carbon_slope(j)));
    let mut left = HOURS as f64;
    let mut delta = vec![-1.0; HOURS];
    for h in order {
        let take = (b.delta_upper(h) + 1.0).min(left);
        delta[h] += take;
        left -= take;
    }
    b.emissions(&delta)
}

// 5
fn optimizer_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let carbon_only = PlannerConfig { lambda_p: 0.0, ..Default::default() };
    let mut greedy_worst: f64 = 0.0;
    let mut violations = Vec::new();
    for i in 0..1000 {
        let p = problem(vec![random_block(&mut rng, &format!("g{i}"), "dc", true)], carbon_only);
        let r = solve(&p);
        let want = greedy(&p.blocks[0]);
        greedy_worst = greedy_worst.max((r.objective - want).abs() / want.abs());
        if let Err(e) = check_result(&p, &r, 1e-8) {
            violations.push(e);
        }
    }

    let mut split_worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(2..=6);
        let blocks: Vec<ClusterBlock> =
            (0..n).map(|k| random_block(&mut rng, &format!("j{i}-{k}"), ["A", "B", "C"][k % 3], false)).collect();
        let cfg = PlannerConfig { lambda_p: rng.random_range(0.0..5.0), ..Default::default() };
        let mut p = problem(blocks, cfg);
        for campus in ["A", "B"] {
            if rng.random_bool(0.6) {
                let free: f64 = p
                    .blocks
                    .iter()
                    .filter(|b| b.campus_id == campus)
                    .map(|b| b.power.iter().copied().fold(0.0, f64::max))
                    .sum();
                p.campus_limits.insert(campus.into(), free * rng.random_range(0.9..1.05));
            }
        }
        p.campus_limits.retain(|c, _| p.blocks.iter().any(|b| &b.campus_id == c));
        let joint = solve_joint(&p);
        let parts = solve(&p);
        split_worst = split_worst.max((joint.objective - parts.objective).abs() / joint.objective.abs().max(1e-12));
        for r in [&joint, &parts] {
            if let Err(e) = check_result(&p, r, 1e-8) {
                violations.push(e);
            }
        }
        assert!(decompose_by_campus(&p).len() <= p.blocks.len());
    }

    let mut tie_worst: f64 = 0.0;
    for i in 0..200 {
        let mut b = random_block(&mut rng, &format!("t{i}"), "dc", false);
        let eta = rng.random_range(0.05..0.8);
        b.eta = vec![eta; HOURS];
        b.sensitivity = vec![rng.random_range(0.2..1.5); HOURS];
        // zero must be feasible for the tie-break to reach it
        b.power_cap_bound.iter_mut().for_each(|x| *x = x.abs());
        let r = solve(&problem(vec![b], carbon_only));
        let d = r.clusters[0].delta.as_deref().unwrap_or(&[]);
        tie_worst = tie_worst.max(d.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
    }

    outcome(
        greedy_worst <= 1e-6 && split_worst <= 1e-8 && violations.is_empty() && tie_worst < 1e-9,
        format!(
            "greedy gap {greedy_worst:.1e} over 1000 instances; joint vs decomposed {split_worst:.1e} over 200; {} constraint violations; constant-carbon max |delta| {tie_worst:.1e}",
            violations.len()
        ),
    )
}

// 7
fn slo_state_machine() -> Outcome {
    let d0 = NaiveDate::from_ymd_opt(2024, 6, 3).unwrap();
    let day = |i: i64| d0 + chrono::Duration::days(i);
    let curve = |i: i64, mode: CurveMode| VccCurve {
        cluster_id: "c".into(),
        date: day(i),
        vcc: vec![100.0; HOURS],
        mode,
        reason: None,
        provenance: "script".into(),
    };
    let run = |fractions: &[(f64, CurveMode)]| {
        let mut s = SloState::new("c");
        let mut fired = Vec::new();
        for (i, (f, mode)) in fractions.iter().enumerate() {
            let c = curve(i as i64, *mode);
            let next = check_slo(f * c.total(), &c, &s, 0.98);
            if next.shaping_disabled_until != s.shaping_disabled_until {
                fired.push(i);
            }
            s = next;
        }
        (s, fired)
    };
    use CurveMode::{FallbackCapacity as F, Shaped as S};
    let mut ok = true;
    let mut notes = Vec::new();

    let (s, fired) = run(&[(0.99, S), (0.985, S)]);
    ok &= fired == vec![1];
    // disabled on the seven days after the trigger, shaping again on the eighth
    let disabled: Vec<bool> = (2..=9).map(|i| s.is_disabled(day(i))).collect();
    ok &= disabled == [true, true, true, true, true, true, true, false];
    notes.push(format!("two days >= 98% fire on day 2, disabled days {:?}", disabled.iter().filter(|d| **d).count()));

    let (_, fired) = run(&[(0.99, S), (0.97, S), (0.99, S), (0.5, S), (0.98, S)]);
    ok &= fired.is_empty();
    let (_, fired) = run(&[(0.99, S), (0.99, F), (0.99, S)]);
    ok &= fired.is_empty();
    let (_, fired) = run(&[(0.97, S), (0.98, S), (0.981, S)]);
    ok &= fired == vec![2];
    notes.push("interrupted streaks never fire".into());

    // through the planner: fallback for the week, shaped on day 8
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let planner = PlannerConfig::default();
    let mut req = loop {
        let mut req = random_request(&mut rng, 0);
        req.clusters.truncate(1);
        let cand = &mut req.clusters[0];
        cand.cluster_id = "c".into();
        cand.grid_zone = "north".into();
        let capacity = cand.machine_capacity;
        cand.forecast = Ok(random_forecast(&mut rng, "c", day(0), capacity));
        req.carbon.insert("north".into(), (0..HOURS).map(|h| 0.2 + 0.01 * h as f64).collect());
        req.campus_limits.clear();
        // a cluster that shapes when nothing holds it back
        if plan_day(&req, &planner, &BTreeMap::new()).expect("valid config").shaped_count() == 1 {
            break req;
        }
    };
    let slo = BTreeMap::from([("c".to_string(), s.clone())]);
    let mut modes = Vec::new();
    for i in 2..=9 {
        req.date = day(i);
        let plan = plan_day(&req, &planner, &slo).expect("valid config");
        modes.push(plan.curves[0].mode);
    }
    let want: Vec<CurveMode> = (2..=9).map(|i| if i <= 8 { F } else { S }).collect();
    ok &= modes == want;
    notes.push(format!(
        "planner modes over the week {:?}",
        modes.iter().map(|m| if *m == S { 'S' } else { 'F' }).collect::<String>()
    ));
    outcome(ok, notes.join("; "))
}

// 8
fn cluster_shaping_impact() -> Outcome {
    let cfg = ExperimentConfig {
        days: 30,
        treatment_probability: 1.0,
        planner: PlannerConfig { lambda_p: 0.5, ..Default::default() },
        ..Default::default()
    };
    let fleet = archetype_fleet("x", 10, cfg.warmup_days + cfg.days, 808).expect("archetype x");
    let s = match run_experiment(&fleet, &cfg) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let paired: Vec<_> = s.records.iter().filter(|r| r.shaped).filter_map(|r| r.paired).collect();
    let within = paired.iter().filter(|p| (p.realized_drop_pct - p.linearized_drop_pct).abs() <= 2.0).count();
    let gap = (s.realized_drop_pct.mean - s.linearized_drop_pct.mean).abs();
    outcome(
        !paired.is_empty() && s.realized_drop_pct.mean > 0.0 && gap <= 2.0,
        format!(
            "top-carbon-hour power drop {:.2}% simulated vs {:.2}% predicted (gap {gap:.2} pp) over {} shaped cluster-days; {}/{} days individually within 2 pp",
            s.realized_drop_pct.mean,
            s.linearized_drop_pct.mean,
            paired.len(),
            within,
            paired.len()
        ),
    )
}

// 9
fn campus_shaping_impact() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let fleet = default_campus(cfg.warmup_days + cfg.days, cfg.seed);
    let s = match run_experiment(&fleet, &cfg) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let d = s.top_carbon_difference;
    let e = s.emissions_delta_kg;
    outcome(
        s.clusters == 20 && d.mean < 0.0 && d.upper < 0.0 && e.mean < 0.0 && secs < 300.0,
        format!(
            "{} clusters x {} days, {} treated; treated - control top-3 power {:+.4} (95% CI [{:+.4}, {:+.4}]), {:.2}% drop; emissions {:+.1} kg per shaped day; {secs:.1} s",
            s.clusters, s.days, s.treated_days, d.mean, d.lower, d.upper, s.top_carbon_drop_pct, e.mean
        ),
    )
}

// 10
fn flexible_work_conservation() -> Outcome {
    let cfg = ExperimentConfig::default();
    let days = cfg.warmup_days + cfg.days;
    let mut fleet = archetype_fleet("x", 10, days, 1010).expect("archetype x");
    let y = archetype_fleet("y", 10, days, 1011).expect("archetype y");
    fleet.clusters.extend(y.clusters);
    let s = match run_experiment(&fleet, &cfg) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let sufficient = s.records.iter().filter(|r| r.shaped && r.capacity_sufficient()).count();
    outcome(
        sufficient > 0 && s.late_with_sufficient_capacity == 0,
        format!(
            "{} late completions on {sufficient} shaped cluster-days with VCC covering demand ({} late overall, {} shaped days)",
            s.late_with_sufficient_capacity, s.late_total, s.shaped_days
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// 11
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut spec = default_campus(22, 1111);
    spec.clusters.truncate(3);
    let a = write_fixture(&spec, &tmp.path().join("a")).expect("fixture");
    write_fixture(&spec, &tmp.path().join("b")).expect("fixture");
    let fixtures_equal = snapshot(&tmp.path().join("a")) == snapshot(&tmp.path().join("b"));

    let run = |cfg_path: &Path| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let config = RunConfig::load(cfg_path, std::iter::empty()).map_err(|e| e.to_string())?;
        let out = pipeline::run_pipeline(&config, None, Stage::Plan).map_err(|e| e.to_string())?;
        let snap = snapshot(&out.root);
        std::fs::remove_dir_all(&config.paths.output).map_err(|e| e.to_string())?;
        Ok(snap)
    };
    let (first, second) = match (run(&a.config), run(&a.config)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let pipeline_equal = !first.is_empty() && first == second;

    let cfg = ExperimentConfig { days: 14, warmup_days: 14, ..Default::default() };
    let fleet = default_campus(28, 1112);
    let exp = || run_experiment(&fleet, &cfg).map(|s| serde_json::to_vec(&s).unwrap());
    let experiment_equal = match (exp(), exp()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    outcome(
        fixtures_equal && pipeline_equal && experiment_equal,
        format!(
            "fixtures identical: {fixtures_equal}; pipeline artifacts identical: {pipeline_equal} ({} files); experiment summary identical: {experiment_equal}",
            first.len()
        ),
    )
}

fn main() {
    // libtest passes flags such as --nocapture or a name filter; a filter
    // that does not match this suite skips it
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let plans = random_plans();
    type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;
    let checks: Vec<(&str, Check)> = vec![
        ("power-model fidelity", Box::new(power_model_fidelity)),
        ("power derivative consistency", Box::new(derivative_consistency)),
        ("forecast backtest", Box::new(forecast_backtest)),
        ("capacity requirement identity", Box::new(|| capacity_identity(&plans))),
        ("optimizer correctness", Box::new(optimizer_correctness)),
        ("VCC invariants", Box::new(|| vcc_invariants(&plans))),
        ("SLO state machine", Box::new(slo_state_machine)),
        ("cluster-scale shaping impact", Box::new(cluster_shaping_impact)),
        ("campus-scale shaping impact", Box::new(campus_shaping_impact)),
        ("flexible-work conservation", Box::new(flexible_work_conservation)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<32} {}  {} [{:.1} s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
