//! Single-level reformulation of the pricing game.
//!
//! The follower LP is replaced by primal feasibility, dual feasibility and
//! complementary slackness. The leader's revenue `p·x` is bilinear, so the
//! objective uses strong duality instead: follower cost equals `b·u`, hence
//! leader profit = `b·u` minus the non-leader parts of the follower cost
//! minus supply costs. Complementarity is linearized with one binary per pair.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use sbpp_solver::{
    BackendRegistry, BranchingRule, Heuristic, LinearProgram, MilpModel, MilpStatus, ObjectiveSense, Sense, SolveOptions,
};

use crate::error::{CoreError, Result};
use crate::follower_lp::{
    build_follower_lp, dual_objective, flat_duals, leader_profit, min_norm_certificate, optimistic_point,
    reduced_costs, solve_follower_with, FollowerDuals, FollowerLp, FollowerSolution, RowKind, VarKind,
};
use crate::model::{ensure_valid, Instance, PriceProfile};

/// One complementarity condition: a nonnegative primal quantity against a
/// nonnegative multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompPair {
    /// Slack of an inequality row against its multiplier.
    Row { row: usize, slack_bound: f64 },
    /// A follower variable against its reduced cost.
    Col { col: usize, value_bound: f64 },
}

impl CompPair {
    pub fn primal_bound(&self) -> f64 {
        match *self {
            CompPair::Row { slack_bound, .. } => slack_bound,
            CompPair::Col { value_bound, .. } => value_bound,
        }
    }
}

/// Follower LP with symbolic prices plus its complementarity pairs.
#[derive(Debug, Clone)]
pub struct MpccSystem {
    /// Follower LP; its objective holds only the price-free part.
    pub follower: FollowerLp,
    pub pairs: Vec<CompPair>,
    /// Structural upper bound of every follower variable.
    pub col_bounds: Vec<f64>,
    /// Leader price bounds.
    pub price_upper: Vec<f64>,
    /// Supply cost weight of each follower column (`P·K` on leader purchases).
    pub supply_cost: Vec<f64>,
}

pub fn build_mpcc(instance: &Instance) -> Result<MpccSystem> {
    ensure_valid(instance)?;
    let t = instance.horizon;
    let follower = build_follower_lp(instance, &PriceProfile { leader: vec![0.0; t] })?;
    let bat = &instance.battery;
    let charge_cap = if bat.max_level > 0.0 { bat.max_level * (2.0 - bat.discharge_eff) / bat.charge_eff } else { 0.0 };

    let col_bounds: Vec<f64> = follower
        .cols
        .iter()
        .map(|tag| {
            let dg = instance.tree.leaves[tag.scenario].dg_bound.get(tag.slot).copied().unwrap_or(0.0);
            let beta = tag.device.map(|d| instance.devices[d].max_power);
            match tag.kind {
                VarKind::Leader | VarKind::Competitor => beta.unwrap(),
                VarKind::Dg => beta.unwrap().min(dg),
                VarKind::Discharge => beta.unwrap().min(bat.max_level),
                VarKind::StoreLeader | VarKind::StoreCompetitor => charge_cap,
                VarKind::StoreDg => charge_cap.min(dg),
                VarKind::State => bat.max_level,
            }
        })
        .collect();

    let mut pairs = Vec::new();
    for (i, tag) in follower.rows.iter().enumerate() {
        let slack_bound = match tag.kind {
            RowKind::Demand => {
                let d = &instance.devices[tag.device.unwrap()];
                (d.window.len() as f64 * d.max_power - d.energy_demand).max(0.0)
            }
            RowKind::Power => instance.devices[tag.device.unwrap()].max_power,
            RowKind::StateMin | RowKind::StateMax => bat.max_level - bat.min_level,
            RowKind::DischargeCap => bat.max_level,
            RowKind::DgCap => instance.tree.leaves[tag.scenario].dg_bound[tag.slot.unwrap()],
            RowKind::Initial | RowKind::Dynamics | RowKind::NonAnticipativity => continue,
        };
        pairs.push(CompPair::Row { row: i, slack_bound });
    }
    for (j, &b) in col_bounds.iter().enumerate() {
        pairs.push(CompPair::Col { col: j, value_bound: b });
    }

    let k = &instance.prices.supply_cost;
    let supply_cost = follower.price_terms.iter().map(|pt| pt.map_or(0.0, |(h, w)| w * k[h])).collect();
    Ok(MpccSystem { follower, pairs, col_bounds, price_upper: instance.prices.competitor.clone(), supply_cost })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PrimalM {
    /// Bounds implied by the follower's constraints; never cut a solution.
    Structural,
    Uniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DualM {
    /// Scaled from the largest per-unit cost in the instance.
    DataDriven,
    Uniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigMConfig {
    pub primal: PrimalM,
    pub dual: DualM,
    /// Used for any pair whose structural bound is not finite.
    pub default_m: f64,
    /// Times the dual bound is doubled after a flagged audit.
    pub max_retries: usize,
}

impl Default for BigMConfig {
    fn default() -> Self {
        Self { primal: PrimalM::Structural, dual: DualM::DataDriven, default_m: 1e5, max_retries: 3 }
    }
}

impl BigMConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        if bad(self.default_m)
            || matches!(self.primal, PrimalM::Uniform(v) if bad(v))
            || matches!(self.dual, DualM::Uniform(v) if bad(v))
        {
            return Err(CoreError::Config("big-M values must be positive and finite".into()));
        }
        Ok(())
    }

    /// Dual bound for this system.
    pub fn dual_m(&self, mpcc: &MpccSystem) -> f64 {
        match self.dual {
            DualM::Uniform(v) => v,
            DualM::DataDriven => data_driven_dual_m(mpcc),
        }
    }

    fn primal_m(&self, pair: &CompPair) -> f64 {
        match self.primal {
            PrimalM::Uniform(v) => v,
            PrimalM::Structural => {
                let b = pair.primal_bound();
                if b.is_finite() {
                    b
                } else {
                    self.default_m
                }
            }
        }
    }
}

/// Largest objective coefficient a unit of energy can carry (competitor price
/// plus inconvenience), inflated for battery losses and a safety factor.
pub fn data_driven_dual_m(mpcc: &MpccSystem) -> f64 {
    let f = &mpcc.follower;
    let pmax = mpcc.price_upper.iter().cloned().fold(0.0, f64::max);
    let cmax = f.base_cost.iter().zip(&f.cols).map(|(c, tag)| c / f.probabilities[tag.scenario]).fold(0.0, f64::max);
    let eff = battery_eff(f);
    8.0 * (pmax + cmax) / eff + 1.0
}

fn battery_eff(f: &FollowerLp) -> f64 {
    // Dynamics rows hold -rho_d on the state and -rho_c on charging columns.
    let mut rho = 1.0f64;
    for (row, tag) in f.lp.rows.iter().zip(&f.rows) {
        if tag.kind == RowKind::Dynamics {
            for &(_, a) in &row.coeffs {
                if a < 0.0 {
                    rho = rho.min(-a);
                }
            }
            break;
        }
    }
    rho * rho
}

/// Column layout of the single-level MILP.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub model: MilpModel,
    pub price_cols: Vec<usize>,
    /// Follower variable `j` lives at column `y_start + j`.
    pub y_start: usize,
    /// Multiplier of follower row `i` lives at `u_start + i`.
    pub u_start: usize,
    /// Binary of pair `k` lives at `model.binaries[k]`.
    pub primal_m: Vec<f64>,
    pub dual_m: f64,
    /// Whether each pair's primal M is a proven bound.
    pub primal_structural: bool,
}

pub fn linearize(mpcc: &MpccSystem, config: &BigMConfig) -> Result<LinearizedModel> {
    linearize_with(mpcc, config, &BTreeMap::new())
}

/// As [`linearize`], with leader prices pinned by equality rows.
pub fn linearize_with(mpcc: &MpccSystem, config: &BigMConfig, pinned: &BTreeMap<usize, f64>) -> Result<LinearizedModel> {
    config.check()?;
    let f = &mpcc.follower;
    let t = mpcc.price_upper.len();
    let md = config.dual_m(mpcc);
    let mut lp = LinearProgram::new(ObjectiveSense::Maximize);

    let price_cols: Vec<usize> = (0..t).map(|h| lp.add_named_col(format!("p_h{h}"), 0.0, mpcc.price_upper[h], 0.0)).collect();
    let y_start = lp.num_cols();
    for (j, name) in f.lp.col_names.iter().enumerate() {
        let cost = -(f.base_cost[j] + mpcc.supply_cost[j]);
        lp.add_named_col(name.clone(), 0.0, mpcc.col_bounds[j], cost);
    }
    let u_start = lp.num_cols();
    for (i, row) in f.lp.rows.iter().enumerate() {
        let lower = if f.is_inequality(i) { 0.0 } else { -md };
        lp.add_named_col(format!("u_{}", f.lp.row_names[i]), lower, md, f.row_sign(i) * row.rhs);
    }

    // Primal feasibility.
    for (i, row) in f.lp.rows.iter().enumerate() {
        let coeffs = row.coeffs.iter().map(|&(j, a)| (y_start + j, a)).collect();
        lp.add_named_row(format!("primal_{}", f.lp.row_names[i]), coeffs, row.sense, row.rhs);
    }
    // Dual feasibility: sum_i sign_i a_ij u_i - w_j p_h <= base_j.
    let mut at: Vec<Vec<(usize, f64)>> = vec![Vec::new(); f.cols.len()];
    for (i, row) in f.lp.rows.iter().enumerate() {
        let s = f.row_sign(i);
        for &(j, a) in &row.coeffs {
            at[j].push((u_start + i, s * a));
        }
    }
    for (j, col) in at.iter().enumerate() {
        let mut coeffs = col.clone();
        if let Some((h, w)) = f.price_terms[j] {
            coeffs.push((price_cols[h], -w));
        }
        lp.add_named_row(format!("dual_{}", f.lp.col_names[j]), coeffs, Sense::Le, f.base_cost[j]);
    }

    let mut model = MilpModel::new(lp);
    let mut primal_m = Vec::with_capacity(mpcc.pairs.len());
    for (k, pair) in mpcc.pairs.iter().enumerate() {
        let mp = config.primal_m(pair);
        if !(mp >= 0.0 && mp.is_finite()) {
            return Err(CoreError::Config(format!("pair {k}: invalid primal M {mp}")));
        }
        primal_m.push(mp);
        let d = model.add_binary(Some(format!("delta_{k}")), 0.0);
        if pair.primal_bound() <= 0.0 {
            // The primal side is identically zero, so the switch is settled.
            model.lp.upper[d] = 0.0;
        }
        let lp = &mut model.lp;
        match *pair {
            CompPair::Row { row, .. } => {
                let r = &f.lp.rows[row];
                let s = f.row_sign(row);
                let mut coeffs: Vec<(usize, f64)> = r.coeffs.iter().map(|&(j, a)| (y_start + j, s * a)).collect();
                coeffs.push((d, -mp));
                lp.add_named_row(format!("cs_slack_{k}"), coeffs, Sense::Le, s * r.rhs);
                lp.add_named_row(format!("cs_mult_{k}"), vec![(u_start + row, 1.0), (d, md)], Sense::Le, md);
            }
            CompPair::Col { col, .. } => {
                lp.add_named_row(format!("cs_var_{k}"), vec![(y_start + col, 1.0), (d, -mp)], Sense::Le, 0.0);
                // Reduced cost base + w p - sum sign a u <= md (1 - delta).
                let mut coeffs: Vec<(usize, f64)> = at[col].iter().map(|&(c, v)| (c, -v)).collect();
                if let Some((h, w)) = f.price_terms[col] {
                    coeffs.push((price_cols[h], w));
                }
                coeffs.push((d, md));
                lp.add_named_row(format!("cs_rc_{k}"), coeffs, Sense::Le, md - f.base_cost[col]);
            }
        }
    }
    for (&h, &v) in pinned {
        if h >= t {
            return Err(CoreError::Dimension(format!("pinned slot {h} outside {t} slots")));
        }
        model.lp.add_named_row(format!("pin_h{h}"), vec![(price_cols[h], 1.0)], Sense::Eq, v);
    }
    Ok(LinearizedModel {
        model,
        price_cols,
        y_start,
        u_start,
        primal_m,
        dual_m: md,
        primal_structural: config.primal == PrimalM::Structural,
    })
}

impl LinearizedModel {
    pub fn num_continuous(&self) -> usize {
        self.model.lp.num_cols() - self.model.binaries.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.model.lp.num_rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Primal,
    Dual,
    /// A free multiplier of an equality row at its bound.
    FreeDual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFlag {
    /// Pair index, or follower row for [`Side::FreeDual`].
    pub index: usize,
    pub side: Side,
    pub value: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub flags: Vec<AuditFlag>,
    pub max_dual: f64,
    pub max_primal_ratio: f64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

const AUDIT_MARGIN: f64 = 1.0 - 1e-6;

/// Flag complementarity sides that reach their big-M at the MILP point `x`.
///
/// Multipliers are not unique, and vertices of the single-level model put
/// degenerate ones at their bounds. The audit therefore asks for the
/// smallest certificate of the follower's optimality at this point and
/// checks that one against M; the solver's own multipliers are used only
/// when no certificate is found. Structural primal bounds are never
/// flagged: they cannot cut solutions.
pub fn audit_big_m(mpcc: &MpccSystem, lin: &LinearizedModel, x: &[f64]) -> AuditReport {
    let f = &mpcc.follower;
    let y = &x[lin.y_start..lin.y_start + f.cols.len()];
    let prices: Vec<f64> = lin.price_cols.iter().map(|&c| x[c]).collect();
    let mut priced = f.clone();
    priced.set_prices(&PriceProfile { leader: prices }).expect("price length");
    let u = match min_norm_certificate(&priced, y) {
        Some((u, _)) => u,
        None => x[lin.u_start..lin.u_start + f.lp.num_rows()].to_vec(),
    };
    audit_values(mpcc, lin, &priced, y, &u)
}

/// Audit with explicit multipliers `u` (normalized, follower row order).
pub fn audit_values(mpcc: &MpccSystem, lin: &LinearizedModel, priced: &FollowerLp, y: &[f64], u: &[f64]) -> AuditReport {
    let f = priced;
    let rc = reduced_costs(priced, u);
    let mut report = AuditReport::default();
    for (k, pair) in mpcc.pairs.iter().enumerate() {
        let (primal, dual) = match *pair {
            CompPair::Row { row, .. } => {
                let r = &f.lp.rows[row];
                (f.row_sign(row) * (r.activity(y) - r.rhs), u[row])
            }
            CompPair::Col { col, .. } => (y[col], rc[col]),
        };
        report.max_dual = report.max_dual.max(dual.abs());
        let mp = lin.primal_m[k];
        if mp > 0.0 {
            report.max_primal_ratio = report.max_primal_ratio.max(primal / mp);
        }
        if dual > AUDIT_MARGIN * lin.dual_m {
            report.flags.push(AuditFlag { index: k, side: Side::Dual, value: dual, m: lin.dual_m });
        }
        if !lin.primal_structural && mp > 0.0 && primal > AUDIT_MARGIN * mp {
            report.flags.push(AuditFlag { index: k, side: Side::Primal, value: primal, m: mp });
        }
    }
    for i in 0..f.lp.num_rows() {
        if !f.is_inequality(i) {
            report.max_dual = report.max_dual.max(u[i].abs());
            if u[i].abs() > AUDIT_MARGIN * lin.dual_m {
                report.flags.push(AuditFlag { index: i, side: Side::FreeDual, value: u[i], m: lin.dual_m });
            }
        }
    }
    report
}

/// Bilevel-feasible points for the branch-and-bound: take the prices of a
/// node, let the follower answer optimistically, and switch each
/// complementarity binary on where the primal side is positive.
#[derive(Debug, Clone)]
pub struct PriceHeuristic {
    instance: Instance,
    follower: FollowerLp,
    pairs: Vec<CompPair>,
    price_cols: Vec<usize>,
    price_upper: Vec<f64>,
    binaries: Vec<usize>,
    num_cols: usize,
}

const SWITCH_TOL: f64 = 1e-7;

impl PriceHeuristic {
    pub fn new(instance: &Instance, mpcc: &MpccSystem, lin: &LinearizedModel) -> Self {
        Self {
            instance: instance.clone(),
            follower: mpcc.follower.clone(),
            pairs: mpcc.pairs.clone(),
            price_cols: lin.price_cols.clone(),
            price_upper: mpcc.price_upper.clone(),
            binaries: lin.model.binaries.clone(),
            num_cols: lin.model.lp.num_cols(),
        }
    }

    /// Point whose binaries encode the optimistic response to `prices`.
    pub fn point_for_prices(&self, prices: &[f64]) -> Option<Vec<f64>> {
        let prices = PriceProfile {
            leader: prices.iter().zip(&self.price_upper).map(|(p, ub)| p.clamp(0.0, *ub)).collect(),
        };
        let mut priced = self.follower.clone();
        priced.set_prices(&prices).ok()?;
        let (_, _, y) = optimistic_point(&priced, &self.instance, &prices).ok()?;
        let mut x = vec![0.0; self.num_cols];
        for (&c, &p) in self.price_cols.iter().zip(&prices.leader) {
            x[c] = p;
        }
        for (k, pair) in self.pairs.iter().enumerate() {
            let primal = match *pair {
                CompPair::Row { row, .. } => {
                    let r = &priced.lp.rows[row];
                    priced.row_sign(row) * (r.activity(&y) - r.rhs)
                }
                CompPair::Col { col, .. } => y[col],
            };
            x[self.binaries[k]] = if primal > SWITCH_TOL { 1.0 } else { 0.0 };
        }
        Some(x)
    }

    pub fn point(&self, x: &[f64]) -> Option<Vec<f64>> {
        let prices: Vec<f64> = self.price_cols.iter().map(|&c| x[c]).collect();
        self.point_for_prices(&prices)
    }
}

#[derive(Debug, Clone)]
pub struct BilevelOptions {
    pub big_m: BigMConfig,
    pub solve: SolveOptions,
    /// Leader prices fixed in advance, by slot.
    pub pinned: BTreeMap<usize, f64>,
    /// Seed the search with optimistic responses to candidate prices.
    pub heuristics: bool,
}

impl Default for BilevelOptions {
    fn default() -> Self {
        Self {
            big_m: BigMConfig::default(),
            solve: SolveOptions { branching_rule: BranchingRule::PseudoCost, ..SolveOptions::default() },
            pinned: BTreeMap::new(),
            heuristics: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilevelSolution {
    pub prices: PriceProfile,
    pub follower: FollowerSolution,
    pub duals: FollowerDuals,
    pub binaries: Vec<bool>,
    /// Expected leader profit computed from prices and purchases.
    pub leader_objective: f64,
    /// The MILP objective (strong-duality form).
    pub milp_objective: f64,
    pub status: MilpStatus,
    pub mip_gap: f64,
    pub bound: f64,
    pub nodes: usize,
    pub runtime_s: f64,
    pub audit: AuditReport,
    pub dual_m: f64,
    pub retries: usize,
}

impl BilevelSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == MilpStatus::Optimal
    }
}

/// Build, linearize and solve; on a flagged audit double the dual M and retry.
pub fn solve_bilevel(instance: &Instance, opts: &BilevelOptions, backends: &BackendRegistry) -> Result<BilevelSolution> {
    let mpcc = build_mpcc(instance)?;
    let mut config = opts.big_m;
    let mut dual_m = config.dual_m(&mpcc);
    let mut retries = 0;
    loop {
        config.dual = DualM::Uniform(dual_m);
        let lin = linearize_with(&mpcc, &config, &opts.pinned)?;
        let mut solve = opts.solve.clone();
        if opts.heuristics {
            let heur = Arc::new(PriceHeuristic::new(instance, &mpcc, &lin));
            if solve.initial_solution.is_none() {
                let start: Vec<f64> = (0..instance.horizon)
                    .map(|h| opts.pinned.get(&h).copied().unwrap_or(instance.prices.competitor[h]))
                    .collect();
                solve.initial_solution = heur.point_for_prices(&start);
            }
            let h = heur.clone();
            solve.heuristic = Some(Heuristic(Arc::new(move |x: &[f64]| h.point(x))));
        }
        let res = backends.solve_milp(&lin.model, &solve)?;
        let can_retry = retries < opts.big_m.max_retries;
        match res.status {
            MilpStatus::Infeasible if can_retry => {}
            MilpStatus::Infeasible => return Err(CoreError::BilevelInfeasible),
            MilpStatus::Unbounded => return Err(CoreError::Extraction("single-level model unbounded".into())),
            MilpStatus::NoSolution => return Err(CoreError::NoSolution),
            _ => {
                let x = res.x.as_ref().expect("status implies a point");
                let audit = audit_big_m(&mpcc, &lin, x);
                if audit.is_clean() || !can_retry {
                    if !audit.is_clean() {
                        log::warn!("big-M audit still flags {} sides after {retries} retries", audit.flags.len());
                    }
                    return extract(instance, &mpcc, &lin, x, &res, audit, retries);
                }
                log::info!("big-M audit flagged {} sides at M = {dual_m}; doubling", audit.flags.len());
            }
        }
        dual_m *= 2.0;
        retries += 1;
    }
}

fn extract(
    instance: &Instance,
    mpcc: &MpccSystem,
    lin: &LinearizedModel,
    x: &[f64],
    res: &sbpp_solver::MilpSolution,
    audit: AuditReport,
    retries: usize,
) -> Result<BilevelSolution> {
    let f = &mpcc.follower;
    let prices = PriceProfile {
        leader: lin
            .price_cols
            .iter()
            .zip(&mpcc.price_upper)
            .map(|(&c, &ub)| x[c].clamp(0.0, ub))
            .collect(),
    };
    let y = &x[lin.y_start..lin.y_start + f.cols.len()];
    let u = &x[lin.u_start..lin.u_start + f.lp.num_rows()];
    let mut priced = f.clone();
    priced.set_prices(&prices)?;
    let follower = priced.decode(y);
    let duals = priced.decode_duals(u);
    let leader = leader_profit(instance, &prices, &follower);
    let milp_objective = lin.model.lp.evaluate(x);
    let scale = 1.0 + leader.abs();
    if (leader - milp_objective).abs() > 1e-5 * scale {
        return Err(CoreError::Extraction(format!(
            "profit from prices and purchases {leader} differs from strong-duality objective {milp_objective}"
        )));
    }
    let dual_obj = dual_objective(&priced, u);
    if (dual_obj - follower.objective).abs() > 1e-5 * (1.0 + follower.objective.abs()) {
        return Err(CoreError::Extraction(format!(
            "follower cost {} differs from dual objective {dual_obj}",
            follower.objective
        )));
    }
    let binaries = lin.model.binaries.iter().map(|&j| x[j] > 0.5).collect();
    Ok(BilevelSolution {
        prices,
        follower,
        duals,
        binaries,
        leader_objective: leader,
        milp_objective,
        status: res.status,
        mip_gap: res.rel_gap,
        bound: res.bound,
        nodes: res.nodes,
        runtime_s: res.runtime.as_secs_f64(),
        audit,
        dual_m: lin.dual_m,
        retries,
    })
}

/// Re-solve the follower LP at the solution's prices and return its optimal
/// cost, for comparison with the extracted follower cost.
pub fn resolve_follower_cost(instance: &Instance, sol: &BilevelSolution, backends: &BackendRegistry) -> Result<f64> {
    let flp = build_follower_lp(instance, &sol.prices)?;
    let (s, _) = solve_follower_with(&flp, backends)?;
    Ok(s.objective)
}

/// Normalized multipliers of a solution in follower row order.
pub fn solution_duals(mpcc: &MpccSystem, sol: &BilevelSolution) -> Vec<f64> {
    flat_duals(&mpcc.follower, &sol.duals)
}

/// Options for exact small solves: tight gap, generous limits.
pub fn exact_options(time_limit: Duration) -> BilevelOptions {
    BilevelOptions {
        solve: SolveOptions {
            time_limit,
            rel_gap_target: 1e-9,
            branching_rule: BranchingRule::PseudoCost,
            ..SolveOptions::default()
        },
        ..BilevelOptions::default()
    }
}
