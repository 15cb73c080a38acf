use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sbpp_core::baselines::{perfect_case, reference_case, reference_expected};
use sbpp_core::experiments::{
    rh_study_instance, run_rh_study, run_sensitivity, write_solution_series, RhStudySpec, SensitivitySpec, SolutionDump,
};
use sbpp_core::model::{generate_instance, write_series_csv, with_scaled_bases, Instance, Preset, VariantSpec, WindowClass, STOCHASTIC_DG_SCALES};
use sbpp_core::reformulation::{build_mpcc, linearize_with, solve_bilevel, BilevelOptions};
use sbpp_core::rolling_horizon::{audit_trajectory, read_path_csv, run, RhConfig};
use sbpp_core::scenario::{MarkovSelector, ProbRule};
use sbpp_core::CoreError;
use sbpp_solver::{BackendRegistry, MilpStatus};

const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "sbpp", version, about = "Stochastic bilevel pricing: generate, solve, baselines, rolling horizon")]
struct Cli {
    /// Solver backend (`bundled` or `scipy`).
    #[arg(long, global = true, default_value = "bundled")]
    backend: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance as JSON, plus its curves as CSV.
    Generate(GenerateArgs),
    /// Solve the single-level model of an instance.
    Solve(SolveArgs),
    /// Reference or perfect-information baseline.
    Baseline(BaselineArgs),
    /// Rolling-horizon run.
    Rh(RhArgs),
    /// One-shot solves over the variant grid.
    Sensitivity(SensitivityArgs),
    /// Rolling-horizon study over scenario paths and frozen lengths.
    RhStudy(RhStudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    Week,
    Mini,
}

#[derive(Clone, Copy, ValueEnum)]
enum Windows {
    Narrow,
    Base,
    Wide,
}

#[derive(Args, Clone)]
struct PresetArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mini")]
    preset: PresetName,
    /// Slots of the mini preset.
    #[arg(long, default_value_t = 12)]
    slots: usize,
    /// Devices of the mini preset.
    #[arg(long, default_value_t = 4)]
    devices: usize,
}

impl PresetArgs {
    fn preset(&self) -> anyhow::Result<Preset> {
        Ok(match self.preset {
            PresetName::Week => Preset::week(),
            PresetName::Mini => Preset::mini(self.slots, self.devices)?,
        })
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Seconds per solve.
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    /// Relative optimality gap target.
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
}

impl SolverArgs {
    fn options(&self) -> BilevelOptions {
        let mut o = BilevelOptions::default();
        o.solve.time_limit = Duration::from_secs_f64(self.time_limit);
        o.solve.rel_gap_target = self.gap;
        o
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    preset: PresetArgs,
    #[arg(long, default_value_t = 1.0)]
    dg_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    battery_scale: f64,
    #[arg(long, default_value_t = sbpp_core::model::BASE_SLOPE)]
    inconvenience_slope: f64,
    #[arg(long, default_value_t = 1.0)]
    spot_multiplier: f64,
    #[arg(long, value_enum, default_value = "base")]
    windows: Windows,
    /// Replace the DG curve by three base scenarios (x0.5, x1, x1.5).
    #[arg(long)]
    stochastic: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the single-level model in LP format.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Reference,
    Perfect,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "reference")]
    kind: BaselineKind,
    /// Leaf of the scenario tree; the reference case defaults to all leaves.
    #[arg(long)]
    scenario: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct RhParams {
    #[arg(long, default_value_t = 6)]
    l_rh: usize,
    #[arg(long, default_value_t = 1)]
    s_rh: usize,
    #[arg(long, default_value_t = 0)]
    l_fh: usize,
    #[arg(long, default_value_t = 0.4)]
    stay_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    switch_prob: f64,
}

impl RhParams {
    fn config(&self, solver: &SolverArgs, seed: u64) -> anyhow::Result<RhConfig> {
        let cfg = RhConfig {
            l_rh: self.l_rh,
            s_rh: self.s_rh,
            l_fh: self.l_fh,
            time_limit_s: solver.time_limit,
            rel_gap: solver.gap,
            selector: MarkovSelector { stay_prob: self.stay_prob, switch_prob: self.switch_prob },
            seed,
        };
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RhArgs {
    #[arg(long)]
    instance: PathBuf,
    #[command(flatten)]
    params: RhParams,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV of base indices to replay instead of drawing them.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    preset: PresetArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RhStudyArgs {
    #[command(flatten)]
    preset: PresetArgs,
    #[command(flatten)]
    params: RhParams,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 5)]
    paths: usize,
    /// Frozen lengths to compare.
    #[arg(long, value_delimiter = ',', default_value = "0,2,4")]
    frozen: Vec<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

/// Outcome that maps to a nonzero exit code without being an error.
struct Partial;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Partial)) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<CoreError>() {
        Some(
            CoreError::Validation(_)
            | CoreError::Config(_)
            | CoreError::Scenario(_)
            | CoreError::Dimension(_)
            | CoreError::Json(_)
            | CoreError::Csv(_),
        ) => EXIT_VALIDATION,
        Some(CoreError::Io(_)) => 1,
        Some(_) => EXIT_SOLVER,
        None => 1,
    }
}

fn registry(name: &str) -> anyhow::Result<BackendRegistry> {
    let mut reg = BackendRegistry::from_env()?;
    reg.select(name)?;
    Ok(reg)
}

fn dispatch(cli: Cli) -> anyhow::Result<Option<Partial>> {
    let backends = registry(&cli.backend)?;
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a, &backends),
        Command::Baseline(a) => baseline(a, &backends),
        Command::Rh(a) => rolling(a, &backends),
        Command::Sensitivity(a) => sensitivity(a, &backends),
        Command::RhStudy(a) => rh_study(a, &backends),
    }
}

fn load(path: &Path) -> anyhow::Result<Instance> {
    Instance::read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn generate(a: GenerateArgs) -> anyhow::Result<Option<Partial>> {
    let variants = VariantSpec {
        dg_scale: a.dg_scale,
        battery_scale: a.battery_scale,
        inconvenience_slope: a.inconvenience_slope,
        spot_multiplier: a.spot_multiplier,
        window_class: match a.windows {
            Windows::Narrow => WindowClass::Narrow,
            Windows::Base => WindowClass::Base,
            Windows::Wide => WindowClass::Wide,
        },
    };
    let mut inst = generate_instance(a.preset.seed, &a.preset.preset()?, &variants)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_series_csv(&a.out_dir.join("dg.csv"), &inst.tree.bases[0].dg_bound)?;
    if a.stochastic {
        inst = with_scaled_bases(&inst, &STOCHASTIC_DG_SCALES, ProbRule::Uniform)?;
    }
    let path = a.out_dir.join("instance.json");
    inst.write_json(&path)?;
    write_series_csv(&a.out_dir.join("supply_costs.csv"), &inst.prices.supply_cost)?;
    write_series_csv(&a.out_dir.join("competitor_prices.csv"), &inst.prices.competitor)?;
    write_series_csv(&a.out_dir.join("unshifted_demand.csv"), &sbpp_core::model::unshifted_demand(&inst))?;
    println!("{}", path.display());
    Ok(None)
}

fn partial_if(status: MilpStatus) -> Option<Partial> {
    (status != MilpStatus::Optimal).then_some(Partial)
}

fn solve(a: SolveArgs, backends: &BackendRegistry) -> anyhow::Result<Option<Partial>> {
    let inst = load(&a.instance)?;
    let opts = a.solver.options();
    std::fs::create_dir_all(&a.out_dir)?;
    if let Some(lp_path) = &a.export_lp {
        let mpcc = build_mpcc(&inst)?;
        let lin = linearize_with(&mpcc, &opts.big_m, &opts.pinned)?;
        sbpp_solver::lp_format::write_lp_file(&lin.model, lp_path)?;
        log::info!(
            "model: {} constraints, {} continuous, {} binaries",
            lin.num_constraints(),
            lin.num_continuous(),
            lin.model.binaries.len()
        );
    }
    let sol = solve_bilevel(&inst, &opts, backends)?;
    write_json(&a.out_dir.join("solution.json"), &SolutionDump::new(&sol))?;
    write_solution_series(&a.out_dir, &inst, &sol)?;
    println!(
        "status {:?} leader {:.6} follower {:.6} gap {:.3e} time {:.1}s",
        sol.status, sol.leader_objective, sol.follower.objective, sol.mip_gap, sol.runtime_s
    );
    Ok(partial_if(sol.status))
}

fn baseline(a: BaselineArgs, backends: &BackendRegistry) -> anyhow::Result<Option<Partial>> {
    let inst = load(&a.instance)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let leaf = |i: usize| -> anyhow::Result<Vec<f64>> {
        match inst.tree.leaves.get(i) {
            Some(l) => Ok(l.dg_bound.clone()),
            None => bail!(CoreError::Config(format!("scenario {i} out of range"))),
        }
    };
    match a.kind {
        BaselineKind::Reference => {
            let r = match a.scenario {
                Some(i) => reference_case(&inst, &leaf(i)?)?,
                None => reference_expected(&inst)?,
            };
            write_json(&a.out_dir.join("reference.json"), &r)?;
            println!(
                "reference leader {:.6} BC {:.6} IC {:.6} GC {:.6}",
                r.leader_profit, r.billing_cost, r.inconvenience_cost, r.generalized_cost
            );
            Ok(None)
        }
        BaselineKind::Perfect => {
            let (r, sol) = perfect_case(&inst, &leaf(a.scenario.unwrap_or(0))?, &a.solver.options(), backends)?;
            write_json(&a.out_dir.join("perfect.json"), &r)?;
            println!("perfect leader {:.6} GC {:.6} status {:?}", r.leader_profit, r.generalized_cost, sol.status);
            Ok(partial_if(sol.status))
        }
    }
}

fn rolling(a: RhArgs, backends: &BackendRegistry) -> anyhow::Result<Option<Partial>> {
    let inst = load(&a.instance)?;
    let cfg = a.params.config(&a.solver, a.seed)?;
    let forced = a.path.as_deref().map(read_path_csv).transpose()?;
    let traj = run(&inst, &cfg, forced.as_deref(), backends)?;
    std::fs::create_dir_all(&a.out_dir)?;
    traj.write_json(&a.out_dir.join("trajectory.json"))?;
    traj.write_log_csv(&a.out_dir.join("iterations.csv"))?;
    let audit = audit_trajectory(&inst, &traj);
    write_json(&a.out_dir.join("audit.json"), &audit)?;
    let (bc, ic) = traj.follower_costs(&inst);
    println!(
        "leader {:.6} follower GC {:.6} competitor purchases {:.6} DG overuse slots {} unmet devices {}",
        traj.leader_profit(&inst),
        bc + ic,
        audit.competitor_purchases,
        audit.dg_overuse.len(),
        audit.unmet_demand.len()
    );
    if let Some(d) = &traj.diagnostic {
        eprintln!("{d}");
    }
    let exact = traj.log.iter().all(|l| l.status == "optimal");
    Ok((!traj.complete || !exact).then_some(Partial))
}

fn sensitivity(a: SensitivityArgs, backends: &BackendRegistry) -> anyhow::Result<Option<Partial>> {
    let spec = SensitivitySpec { seed: a.preset.seed, preset: a.preset.preset()?, options: a.solver.options() };
    let rows = run_sensitivity(&spec, backends, &a.out_dir)?;
    for r in &rows {
        println!("{:<20} {}", r.name, r.status);
    }
    Ok(rows.iter().any(|r| r.status != "optimal").then_some(Partial))
}

fn rh_study(a: RhStudyArgs, backends: &BackendRegistry) -> anyhow::Result<Option<Partial>> {
    let preset = a.preset.preset()?;
    // Fail early on an unusable instance rather than in every run.
    sbpp_core::model::ensure_valid(&rh_study_instance(a.preset.seed, &preset)?)?;
    let config = a.params.config(&a.solver, a.preset.seed)?;
    let spec = RhStudySpec {
        seed: a.preset.seed,
        preset,
        config,
        paths: a.paths,
        frozen_lengths: a.frozen,
        perfect_time_limit: Duration::from_secs_f64(a.solver.time_limit * 4.0),
    };
    let rows = run_rh_study(&spec, backends, &a.out_dir)?;
    for r in &rows {
        println!("path {} l_fh {:>2} {} exact {}", r.path, r.l_fh, r.status, r.exact);
    }
    Ok(rows.iter().any(|r| r.status != "complete" || !r.exact).then_some(Partial))
}
