//! Reference (greedy, competitor prices) and perfect-information baselines,
//! and the comparison tables built from them.

use sbpp_solver::BackendRegistry;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::follower_lp::{evaluate_schedule, leader_profit, DeviceSchedule, FollowerSolution, ScenarioSchedule};
use crate::model::{ensure_valid, Instance, PriceProfile};
use crate::reformulation::{solve_bilevel, BilevelOptions, BilevelSolution};
use crate::scenario::ScenarioTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Reference,
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    pub prices: PriceProfile,
    pub schedule: FollowerSolution,
    pub leader_profit: f64,
    pub billing_cost: f64,
    pub inconvenience_cost: f64,
    pub generalized_cost: f64,
}

/// Every device at full power from the start of its window.
fn greedy_consumption(instance: &Instance) -> Vec<Vec<f64>> {
    instance
        .devices
        .iter()
        .map(|d| {
            let mut left = d.energy_demand;
            d.window
                .slots()
                .map(|_| {
                    let q = left.min(d.max_power).max(0.0);
                    left -= q;
                    q
                })
                .collect()
        })
        .collect()
}

/// Greedy schedule for one DG path: DG first, then the battery down to its
/// minimum, then the leader; DG surplus is stored while there is room and
/// lost otherwise. The battery is topped up from the leader only when
/// self-discharge would take it below its minimum.
pub fn reference_schedule(instance: &Instance, dg: &[f64]) -> Result<ScenarioSchedule> {
    let t = instance.horizon;
    if dg.len() != t {
        return Err(CoreError::Dimension(format!("DG path has {} slots, expected {t}", dg.len())));
    }
    let b = &instance.battery;
    let use_of = greedy_consumption(instance);
    let mut devices: Vec<DeviceSchedule> = instance
        .devices
        .iter()
        .map(|d| {
            let n = d.window.len();
            DeviceSchedule {
                first: d.window.first,
                leader: vec![0.0; n],
                competitor: vec![0.0; n],
                dg: vec![0.0; n],
                discharge: vec![0.0; n],
            }
        })
        .collect();
    let mut state = vec![0.0; t + 1];
    state[0] = b.initial;
    let (mut store_leader, mut store_dg) = (vec![0.0; t], vec![0.0; t]);
    for h in 0..t {
        let s = state[h];
        let mut dg_left = dg[h].max(0.0);
        let mut battery_left = (b.discharge_eff * s - b.min_level).clamp(0.0, s);
        let mut discharged = 0.0;
        for (i, d) in instance.devices.iter().enumerate() {
            if !d.window.contains(h) {
                continue;
            }
            let k = h - d.window.first;
            let mut need = use_of[i][k];
            let from_dg = need.min(dg_left);
            dg_left -= from_dg;
            need -= from_dg;
            let from_bat = need.min(battery_left);
            battery_left -= from_bat;
            discharged += from_bat;
            need -= from_bat;
            devices[i].dg[k] = from_dg;
            devices[i].discharge[k] = from_bat;
            devices[i].leader[k] = need;
        }
        let after = b.discharge_eff * s - discharged;
        let headroom = ((b.max_level - after) / b.charge_eff).max(0.0);
        store_dg[h] = dg_left.min(headroom);
        let mut next = after + b.charge_eff * store_dg[h];
        if next < b.min_level {
            store_leader[h] = (b.min_level - next) / b.charge_eff;
            next = b.min_level;
        }
        state[h + 1] = next.min(b.max_level);
    }
    Ok(ScenarioSchedule { devices, store_leader, store_competitor: vec![0.0; t], store_dg, state })
}

fn result(instance: &Instance, kind: BaselineKind, prices: PriceProfile, schedule: FollowerSolution) -> BaselineResult {
    let costs = evaluate_schedule(instance, &prices, &schedule);
    let profit = leader_profit(instance, &prices, &schedule);
    BaselineResult {
        kind,
        prices,
        schedule,
        leader_profit: profit,
        billing_cost: costs.billing,
        inconvenience_cost: costs.inconvenience,
        generalized_cost: costs.generalized,
    }
}

/// Reference case for one realized DG path, at the competitor's prices.
pub fn reference_case(instance: &Instance, dg: &[f64]) -> Result<BaselineResult> {
    ensure_valid(instance)?;
    let single = instance.with_tree(ScenarioTree::single(dg.to_vec())?);
    let sc = reference_schedule(&single, dg)?;
    let prices = PriceProfile::competitor(instance);
    let mut sol = FollowerSolution { scenarios: vec![sc], objective: 0.0 };
    let costs = evaluate_schedule(&single, &prices, &sol);
    sol.objective = costs.generalized;
    Ok(result(&single, BaselineKind::Reference, prices, sol))
}

/// Reference case on every leaf of the instance's tree, costs weighted by
/// leaf probability. The greedy rule only looks at past DG, so the result is
/// nonanticipative.
pub fn reference_expected(instance: &Instance) -> Result<BaselineResult> {
    ensure_valid(instance)?;
    let scenarios = instance
        .tree
        .leaves
        .iter()
        .map(|l| reference_schedule(instance, &l.dg_bound))
        .collect::<Result<Vec<_>>>()?;
    let prices = PriceProfile::competitor(instance);
    let mut sol = FollowerSolution { scenarios, objective: 0.0 };
    sol.objective = evaluate_schedule(instance, &prices, &sol).generalized;
    Ok(result(instance, BaselineKind::Reference, prices, sol))
}

/// Bilevel optimum with the DG path known in advance.
pub fn perfect_case(
    instance: &Instance,
    dg: &[f64],
    opts: &BilevelOptions,
    backends: &BackendRegistry,
) -> Result<(BaselineResult, BilevelSolution)> {
    let single = instance.with_tree(ScenarioTree::single(dg.to_vec())?);
    let sol = solve_bilevel(&single, opts, backends)?;
    let res = result(&single, BaselineKind::Perfect, sol.prices.clone(), sol.follower.clone());
    Ok((res, sol))
}

/// Leader objective and follower costs of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub leader: f64,
    pub billing: f64,
    pub inconvenience: f64,
}

impl Outcome {
    pub fn generalized(&self) -> f64 {
        self.billing + self.inconvenience
    }

    pub fn of_baseline(b: &BaselineResult) -> Self {
        Self { leader: b.leader_profit, billing: b.billing_cost, inconvenience: b.inconvenience_cost }
    }

    pub fn of_solution(instance: &Instance, sol: &BilevelSolution) -> Self {
        let c = evaluate_schedule(instance, &sol.prices, &sol.follower);
        Self { leader: sol.leader_objective, billing: c.billing, inconvenience: c.inconvenience }
    }
}

/// Reference against optimized, in percent of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: Outcome,
    pub optimized: Outcome,
    pub leader_diff_pct: Option<f64>,
    pub bc_pct: Option<f64>,
    pub ic_pct: Option<f64>,
    pub gc_pct: Option<f64>,
}

fn ratio(opt: f64, reference: f64) -> Option<f64> {
    (reference.abs() > 1e-12).then(|| 100.0 * opt / reference)
}

pub fn compare_values(reference: Outcome, optimized: Outcome) -> ComparisonReport {
    ComparisonReport {
        reference,
        optimized,
        leader_diff_pct: (reference.leader.abs() > 1e-12)
            .then(|| 100.0 * (optimized.leader - reference.leader) / reference.leader),
        bc_pct: ratio(optimized.billing, reference.billing),
        ic_pct: ratio(optimized.inconvenience, reference.inconvenience),
        gc_pct: ratio(optimized.generalized(), reference.generalized()),
    }
}

pub fn compare(instance: &Instance, optimized: &BilevelSolution, reference: &BaselineResult) -> ComparisonReport {
    compare_values(Outcome::of_baseline(reference), Outcome::of_solution(instance, optimized))
}

/// Format an optional percentage, `-` when undefined.
pub fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}
