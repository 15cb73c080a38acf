//! Batch experiments: the one-shot sensitivity grid and the rolling-horizon
//! study, with their CSV outputs.

use std::path::Path;
use std::time::Duration;

use sbpp_solver::BackendRegistry;
use serde::{Deserialize, Serialize};

use crate::baselines::{compare, fmt_pct, perfect_case, reference_case, ComparisonReport, Outcome};
use crate::error::Result;
use crate::follower_lp::{FollowerSolution, ScenarioSchedule};
use crate::model::{
    generate_instance, unshifted_demand, with_scaled_bases, write_series_csv, Instance, Preset, VariantSpec, WindowClass,
    STOCHASTIC_DG_SCALES,
};
use crate::reformulation::{solve_bilevel, BilevelOptions, BilevelSolution};
use crate::rolling_horizon::{audit_trajectory, run, status_name, write_path_csv, RhConfig, RhTrajectory};
use crate::scenario::ProbRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedVariant {
    pub name: String,
    pub variant: VariantSpec,
}

/// The base case plus one-factor changes of battery, inconvenience, DG,
/// spot prices and window width.
pub fn sensitivity_grid() -> Vec<NamedVariant> {
    let base = VariantSpec::default();
    let mut out = vec![NamedVariant { name: "base".into(), variant: base }];
    let mut push = |name: String, v: VariantSpec| out.push(NamedVariant { name, variant: v });
    for s in [0.0, 0.5, 1.5] {
        push(format!("battery_x{s}"), VariantSpec { battery_scale: s, ..base });
    }
    for s in [0.0, 0.5, 1.5] {
        push(format!("inconvenience_x{s}"), VariantSpec { inconvenience_slope: base.inconvenience_slope * s, ..base });
    }
    for s in [0.0, 0.5, 1.5] {
        push(format!("dg_x{s}"), VariantSpec { dg_scale: s, ..base });
    }
    push("spot_plus20".into(), VariantSpec { spot_multiplier: 1.2, ..base });
    push("windows_narrow".into(), VariantSpec { window_class: WindowClass::Narrow, ..base });
    push("windows_wide".into(), VariantSpec { window_class: WindowClass::Wide, ..base });
    out
}

/// One row of the sensitivity tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub name: String,
    /// Solver status, or `FAILED` with the error in `error`.
    pub status: String,
    pub error: Option<String>,
    pub comparison: Option<ComparisonReport>,
    pub gap: Option<f64>,
    pub runtime_s: Option<f64>,
    pub audit_flags: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SensitivitySpec {
    pub seed: u64,
    pub preset: Preset,
    pub options: BilevelOptions,
}

/// Per-slot series of a solved instance, for plotting.
pub fn write_solution_series(dir: &Path, instance: &Instance, sol: &BilevelSolution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_series_csv(&dir.join("prices.csv"), &sol.prices.leader)?;
    write_series_csv(&dir.join("competitor_prices.csv"), &instance.prices.competitor)?;
    write_series_csv(&dir.join("supply_costs.csv"), &instance.prices.supply_cost)?;
    write_series_csv(&dir.join("unshifted_demand.csv"), &unshifted_demand(instance))?;
    let expected = expected_series(instance, &sol.follower);
    write_series_csv(&dir.join("demand.csv"), &expected.0)?;
    write_series_csv(&dir.join("battery.csv"), &expected.1)?;
    let dg: Vec<f64> = (0..instance.horizon)
        .map(|h| instance.tree.leaves.iter().zip(&instance.tree.probabilities).map(|(l, p)| p * l.dg_bound[h]).sum())
        .collect();
    write_series_csv(&dir.join("dg_bound.csv"), &dg)?;
    Ok(())
}

/// Expected consumption per slot and expected battery level per state slot.
fn expected_series(instance: &Instance, sol: &FollowerSolution) -> (Vec<f64>, Vec<f64>) {
    let probs = &instance.tree.probabilities;
    let mut demand = vec![0.0; instance.horizon];
    let mut state = vec![0.0; instance.horizon + 1];
    for (sc, p) in sol.scenarios.iter().zip(probs) {
        for (h, d) in demand.iter_mut().enumerate() {
            *d += p * sc.consumption(h);
        }
        for (h, s) in state.iter_mut().enumerate() {
            *s += p * sc.state[h];
        }
    }
    (demand, state)
}

fn failed(name: &str, e: impl std::fmt::Display) -> SensitivityRow {
    SensitivityRow {
        name: name.to_string(),
        status: "FAILED".into(),
        error: Some(e.to_string()),
        comparison: None,
        gap: None,
        runtime_s: None,
        audit_flags: None,
    }
}

/// Solve every grid variant once and write `table1.csv`, `table2.csv`,
/// `runs.json` and per-run series under `out_dir`. Failing runs are kept
/// as `FAILED` rows.
pub fn run_sensitivity(spec: &SensitivitySpec, backends: &BackendRegistry, out_dir: &Path) -> Result<Vec<SensitivityRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for nv in sensitivity_grid() {
        log::info!("sensitivity run {}", nv.name);
        let row = match sensitivity_run(spec, &nv, backends, &out_dir.join(&nv.name)) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("run {} failed: {e}", nv.name);
                failed(&nv.name, e)
            }
        };
        rows.push(row);
    }
    write_sensitivity_tables(&rows, out_dir)?;
    std::fs::write(out_dir.join("runs.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(rows)
}

fn sensitivity_run(
    spec: &SensitivitySpec,
    nv: &NamedVariant,
    backends: &BackendRegistry,
    dir: &Path,
) -> Result<SensitivityRow> {
    let inst = generate_instance(spec.seed, &spec.preset, &nv.variant)?;
    std::fs::create_dir_all(dir)?;
    inst.write_json(&dir.join("instance.json"))?;
    let sol = solve_bilevel(&inst, &spec.options, backends)?;
    let reference = reference_case(&inst, &inst.tree.leaves[0].dg_bound)?;
    write_solution_series(dir, &inst, &sol)?;
    std::fs::write(dir.join("solution.json"), serde_json::to_string_pretty(&SolutionDump::new(&sol))?)?;
    Ok(SensitivityRow {
        name: nv.name.clone(),
        status: status_name(sol.status).into(),
        error: None,
        comparison: Some(compare(&inst, &sol, &reference)),
        gap: Some(sol.mip_gap),
        runtime_s: Some(sol.runtime_s),
        audit_flags: Some(sol.audit.flags.len()),
    })
}

fn num(v: Option<f64>) -> String {
    // Values that round to zero print without a sign.
    v.map_or_else(String::new, |x| format!("{:.4}", if x.abs() < 5e-5 { 0.0 } else { x }))
}

pub fn write_sensitivity_tables(rows: &[SensitivityRow], out_dir: &Path) -> Result<()> {
    let mut t1 = csv::Writer::from_path(out_dir.join("table1.csv"))?;
    t1.write_record(["instance", "status", "leader_ref", "leader_opt", "diff_pct", "gap", "runtime_s"])?;
    let mut t2 = csv::Writer::from_path(out_dir.join("table2.csv"))?;
    t2.write_record(["instance", "status", "bc_ref", "bc_opt", "bc_pct", "ic_ref", "ic_opt", "ic_pct", "gc_ref", "gc_opt", "gc_pct"])?;
    for r in rows {
        let c = r.comparison.as_ref();
        let pick = |f: fn(&ComparisonReport) -> f64| num(c.map(f));
        t1.write_record([
            r.name.clone(),
            r.status.clone(),
            pick(|c| c.reference.leader),
            pick(|c| c.optimized.leader),
            c.map_or_else(String::new, |c| c.leader_diff_pct.map_or("-".into(), |v| format!("{v:.4}"))),
            num(r.gap),
            num(r.runtime_s),
        ])?;
        let pct = |f: fn(&ComparisonReport) -> Option<f64>| c.map_or_else(String::new, |c| fmt_pct(f(c)));
        t2.write_record([
            r.name.clone(),
            r.status.clone(),
            pick(|c| c.reference.billing),
            pick(|c| c.optimized.billing),
            pct(|c| c.bc_pct),
            pick(|c| c.reference.inconvenience),
            pick(|c| c.optimized.inconvenience),
            pct(|c| c.ic_pct),
            pick(|c| c.reference.generalized()),
            pick(|c| c.optimized.generalized()),
            pct(|c| c.gc_pct),
        ])?;
    }
    t1.flush()?;
    t2.flush()?;
    Ok(())
}

/// Serializable view of a solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionDump {
    pub status: String,
    pub gap: f64,
    pub bound: f64,
    pub nodes: usize,
    pub runtime_s: f64,
    pub leader_objective: f64,
    pub follower_objective: f64,
    pub prices: Vec<f64>,
    pub dual_m: f64,
    pub big_m_retries: usize,
    pub audit_flags: usize,
    pub scenarios: Vec<ScenarioSchedule>,
}

impl SolutionDump {
    pub fn new(sol: &BilevelSolution) -> Self {
        Self {
            status: status_name(sol.status).into(),
            gap: sol.mip_gap,
            bound: sol.bound,
            nodes: sol.nodes,
            runtime_s: sol.runtime_s,
            leader_objective: sol.leader_objective,
            follower_objective: sol.follower.objective,
            prices: sol.prices.leader.clone(),
            dual_m: sol.dual_m,
            big_m_retries: sol.retries,
            audit_flags: sol.audit.flags.len(),
            scenarios: sol.follower.scenarios.clone(),
        }
    }
}

/// One run of the rolling-horizon study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhStudyRow {
    pub path: usize,
    pub l_fh: usize,
    pub status: String,
    /// Every iteration solved to proven optimality.
    pub exact: bool,
    pub realized_bases: String,
    pub leader_rh: Option<f64>,
    pub follower_gc_rh: Option<f64>,
    pub leader_ref: Option<f64>,
    pub follower_gc_ref: Option<f64>,
    pub leader_perfect: Option<f64>,
    pub competitor_purchases: Option<f64>,
    pub dg_overuse: Option<f64>,
    pub dg_unused: Option<f64>,
    pub runtime_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RhStudySpec {
    pub seed: u64,
    pub preset: Preset,
    pub config: RhConfig,
    pub paths: usize,
    pub frozen_lengths: Vec<usize>,
    /// Time limit of the perfect-information solve.
    pub perfect_time_limit: Duration,
}

/// The generated base instance with one base scenario per nonzero DG scale.
pub fn rh_study_instance(seed: u64, preset: &Preset) -> Result<Instance> {
    let base = generate_instance(seed, preset, &VariantSpec::default())?;
    with_scaled_bases(&base, &STOCHASTIC_DG_SCALES, ProbRule::Uniform)
}

/// For each path: draw it during the first frozen length, replay it for the
/// others, and compute the reference and perfect baselines on it.
pub fn run_rh_study(spec: &RhStudySpec, backends: &BackendRegistry, out_dir: &Path) -> Result<Vec<RhStudyRow>> {
    std::fs::create_dir_all(out_dir)?;
    let inst = rh_study_instance(spec.seed, &spec.preset)?;
    inst.write_json(&out_dir.join("instance.json"))?;
    let mut rows = Vec::new();
    for p in 0..spec.paths {
        let mut forced: Option<Vec<usize>> = None;
        let mut baselines: Option<(Outcome, Option<f64>)> = None;
        for &l_fh in &spec.frozen_lengths {
            let mut cfg = spec.config;
            cfg.l_fh = l_fh;
            cfg.seed = spec.seed.wrapping_mul(1000).wrapping_add(p as u64);
            let dir = out_dir.join(format!("path{p}_lfh{l_fh}"));
            std::fs::create_dir_all(&dir)?;
            let traj = match cfg.check().and_then(|_| run(&inst, &cfg, forced.as_deref(), backends)) {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("path {p} l_fh {l_fh} failed: {e}");
                    rows.push(rh_failed(p, l_fh, &e.to_string()));
                    continue;
                }
            };
            traj.write_json(&dir.join("trajectory.json"))?;
            traj.write_log_csv(&dir.join("iterations.csv"))?;
            write_series_csv(&dir.join("prices.csv"), &traj.frozen_prices)?;
            if forced.is_none() && traj.complete {
                forced = Some(traj.realized_bases.clone());
                write_path_csv(&out_dir.join(format!("path{p}.csv")), &traj.realized_bases)?;
            }
            if baselines.is_none() && traj.complete {
                baselines = Some(path_baselines(&inst, &traj, spec, backends)?);
            }
            rows.push(rh_row(&inst, p, l_fh, &traj, baselines));
        }
    }
    write_rh_table(&rows, &out_dir.join("rh_study.csv"))?;
    Ok(rows)
}

fn path_baselines(
    inst: &Instance,
    traj: &RhTrajectory,
    spec: &RhStudySpec,
    backends: &BackendRegistry,
) -> Result<(Outcome, Option<f64>)> {
    let reference = reference_case(inst, &traj.realized_dg)?;
    let mut opts = BilevelOptions::default();
    opts.solve.time_limit = spec.perfect_time_limit;
    opts.solve.rel_gap_target = spec.config.rel_gap;
    let perfect = match perfect_case(inst, &traj.realized_dg, &opts, backends) {
        Ok((r, _)) => Some(r.leader_profit),
        Err(e) => {
            log::warn!("perfect case failed: {e}");
            None
        }
    };
    Ok((Outcome::of_baseline(&reference), perfect))
}

fn rh_failed(path: usize, l_fh: usize, msg: &str) -> RhStudyRow {
    log::debug!("{msg}");
    RhStudyRow {
        path,
        l_fh,
        status: "FAILED".into(),
        exact: false,
        realized_bases: String::new(),
        leader_rh: None,
        follower_gc_rh: None,
        leader_ref: None,
        follower_gc_ref: None,
        leader_perfect: None,
        competitor_purchases: None,
        dg_overuse: None,
        dg_unused: None,
        runtime_s: None,
    }
}

fn rh_row(inst: &Instance, path: usize, l_fh: usize, traj: &RhTrajectory, base: Option<(Outcome, Option<f64>)>) -> RhStudyRow {
    let audit = audit_trajectory(inst, traj);
    let (billing, inc) = traj.follower_costs(inst);
    let status = if traj.complete { "complete" } else { "partial" };
    RhStudyRow {
        path,
        l_fh,
        status: status.into(),
        exact: traj.log.iter().all(|l| l.status == "optimal"),
        realized_bases: traj.realized_bases.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" "),
        leader_rh: Some(traj.leader_profit(inst)),
        follower_gc_rh: Some(billing + inc),
        leader_ref: base.map(|b| b.0.leader),
        follower_gc_ref: base.map(|b| b.0.generalized()),
        leader_perfect: base.and_then(|b| b.1),
        competitor_purchases: Some(audit.competitor_purchases),
        dg_overuse: Some(audit.dg_overuse.iter().map(|v| v.amount).sum()),
        dg_unused: Some(audit.dg_unused),
        runtime_s: Some(traj.log.iter().map(|l| l.runtime_s).sum()),
    }
}

pub fn write_rh_table(rows: &[RhStudyRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "path",
        "l_fh",
        "status",
        "exact",
        "realized_bases",
        "leader_rh",
        "follower_gc_rh",
        "leader_ref",
        "follower_gc_ref",
        "leader_perfect",
        "competitor_purchases",
        "dg_overuse",
        "dg_unused",
        "runtime_s",
    ])?;
    for r in rows {
        w.write_record([
            r.path.to_string(),
            r.l_fh.to_string(),
            r.status.clone(),
            r.exact.to_string(),
            r.realized_bases.clone(),
            num(r.leader_rh),
            num(r.follower_gc_rh),
            num(r.leader_ref),
            num(r.follower_gc_ref),
            num(r.leader_perfect),
            num(r.competitor_purchases),
            num(r.dg_overuse),
            num(r.dg_unused),
            num(r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

