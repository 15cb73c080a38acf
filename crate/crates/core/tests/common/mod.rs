//! Shared fixtures and brute-force oracles for the integration tests.
//!
//! The oracle LP below is written from the model's definition without going
//! through the library's LP builder: nonanticipativity is imposed between
//! every pair of leaves, not through chained links, and columns are laid
//! out per slot instead of per device.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbpp_core::model::{Battery, Device, Instance, PriceData, TimeWindow};
use sbpp_core::scenario::{ProbRule, ScenarioTree};
use sbpp_solver::{solve_lp, LinearProgram, LpStatus, ObjectiveSense, Sense};

/// Random desk-sized instance: at most 2 devices, 4 slots and 2 leaves.
/// Instances with a battery have at most 3 slots so that the price grid
/// stays small.
pub fn tiny_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let with_battery = rng.random_bool(0.5);
    let t = if with_battery { rng.random_range(2..=3) } else { rng.random_range(2..=4) };
    let n_dev = rng.random_range(1..=2);
    // Without a battery, prices outside every window are irrelevant; on four
    // slots the windows skip slot 0 so at most 3 prices matter.
    let lo = usize::from(!with_battery && t == 4);
    let mut devices = Vec::new();
    for d in 0..n_dev {
        let first = rng.random_range(lo..t);
        let last = rng.random_range(first..t);
        let len = last - first + 1;
        let max_power: f64 = rng.random_range(1.0..3.0);
        let energy = rng.random_range(0.3..=1.0) * max_power * len as f64;
        let slope: f64 = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.1..1.5) };
        devices.push(Device {
            client_id: d as u32,
            appliance_id: 0,
            window: TimeWindow::new(first, last),
            energy_demand: round2(energy),
            max_power: round2(max_power),
            inconvenience: (0..len).map(|k| round2(slope * k as f64)).collect(),
        });
    }
    let battery = if with_battery {
        let max_level = round2(rng.random_range(0.5..3.0));
        Battery {
            initial: round2(rng.random_range(0.0..=max_level)),
            min_level: 0.0,
            max_level,
            charge_eff: 0.95,
            discharge_eff: if rng.random_bool(0.5) { 1.0 } else { 0.9 },
        }
    } else {
        Battery::none()
    };
    let competitor: Vec<f64> = (0..t).map(|_| round2(rng.random_range(4.0..8.0))).collect();
    let supply_cost: Vec<f64> = competitor.iter().map(|&p| round2(p * rng.random_range(0.2..0.8))).collect();
    let n_bases = rng.random_range(1..=2);
    let first_dg: f64 = round2(rng.random_range(0.0..1.5));
    let bases: Vec<Vec<f64>> = (0..n_bases)
        .map(|_| {
            (0..t)
                .map(|h| if h == 0 && rng.random_bool(0.5) { first_dg } else { round2(rng.random_range(0.0..2.0)) })
                .collect()
        })
        .collect();
    let rule = if rng.random_bool(0.5) {
        ProbRule::Uniform
    } else {
        ProbRule::Markov { stay: 0.7, switch: 0.3, previous: Some(0) }
    };
    let rule = if n_bases == 1 { ProbRule::Uniform } else { rule };
    Instance {
        horizon: t,
        slot_minutes: 60,
        devices,
        battery,
        prices: PriceData { competitor, supply_cost },
        tree: ScenarioTree::base_only(bases, rule).unwrap(),
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Column indices of the oracle LP for one leaf.
struct LeafCols {
    /// Per (device, slot): leader, competitor, dg, discharge.
    device: Vec<Vec<Option<[usize; 4]>>>,
    /// Per slot: leader, competitor, dg into the battery.
    store: Vec<[usize; 3]>,
    /// Levels at slot starts 0..=T.
    level: Vec<usize>,
}

pub struct OracleLp {
    pub lp: LinearProgram,
    leaves: Vec<LeafCols>,
}

impl OracleLp {
    pub fn new(inst: &Instance, prices: &[f64]) -> Self {
        let t = inst.horizon;
        let b = &inst.battery;
        let pbar = &inst.prices.competitor;
        let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
        let mut leaves = Vec::new();
        for (leaf, &prob) in inst.tree.leaves.iter().zip(&inst.tree.probabilities) {
            let mut device = vec![vec![None; t]; inst.devices.len()];
            let mut store = Vec::new();
            for h in 0..t {
                for (d, dev) in inst.devices.iter().enumerate() {
                    if dev.window.contains(h) {
                        let c = dev.inconvenience[h - dev.window.first];
                        let ids = [
                            lp.add_col(0.0, f64::INFINITY, prob * (prices[h] + c)),
                            lp.add_col(0.0, f64::INFINITY, prob * (pbar[h] + c)),
                            lp.add_col(0.0, f64::INFINITY, prob * c),
                            lp.add_col(0.0, f64::INFINITY, prob * c),
                        ];
                        device[d][h] = Some(ids);
                    }
                }
                store.push([
                    lp.add_col(0.0, f64::INFINITY, prob * prices[h]),
                    lp.add_col(0.0, f64::INFINITY, prob * pbar[h]),
                    lp.add_col(0.0, f64::INFINITY, 0.0),
                ]);
            }
            let level: Vec<usize> = (0..=t).map(|_| lp.add_col(b.min_level, b.max_level, 0.0)).collect();
            lp.add_row(vec![(level[0], 1.0)], Sense::Eq, b.initial);
            for h in 0..t {
                let active: Vec<[usize; 4]> = device.iter().filter_map(|row| row[h]).collect();
                let mut bal = vec![(level[h + 1], 1.0), (level[h], -b.discharge_eff)];
                for ids in &active {
                    bal.push((ids[3], 1.0));
                }
                for &s in &store[h] {
                    bal.push((s, -b.charge_eff));
                }
                lp.add_row(bal, Sense::Eq, 0.0);
                let mut cap: Vec<(usize, f64)> = active.iter().map(|ids| (ids[3], 1.0)).collect();
                cap.push((level[h], -1.0));
                lp.add_row(cap, Sense::Le, 0.0);
                let mut dg: Vec<(usize, f64)> = active.iter().map(|ids| (ids[2], 1.0)).collect();
                dg.push((store[h][2], 1.0));
                lp.add_row(dg, Sense::Le, leaf.dg_bound[h]);
            }
            for (d, dev) in inst.devices.iter().enumerate() {
                let mut total = Vec::new();
                for h in dev.window.slots() {
                    let ids = device[d][h].unwrap();
                    let row: Vec<(usize, f64)> = ids.iter().map(|&j| (j, 1.0)).collect();
                    total.extend(row.iter().copied());
                    lp.add_row(row, Sense::Le, dev.max_power);
                }
                lp.add_row(total, Sense::Ge, dev.energy_demand);
            }
            leaves.push(LeafCols { device, store, level });
        }
        // Every pair of leaves decides alike while their DG paths agree.
        for a in 0..leaves.len() {
            for c in a + 1..leaves.len() {
                let (pa, pc) = (&inst.tree.leaves[a].dg_bound, &inst.tree.leaves[c].dg_bound);
                let shared = pa.iter().zip(pc).take_while(|(x, y)| x == y).count();
                for h in 0..shared {
                    let mut pairs = vec![(leaves[a].level[h], leaves[c].level[h])];
                    for k in 0..3 {
                        pairs.push((leaves[a].store[h][k], leaves[c].store[h][k]));
                    }
                    for d in 0..inst.devices.len() {
                        if let (Some(x), Some(y)) = (leaves[a].device[d][h], leaves[c].device[d][h]) {
                            for k in 0..4 {
                                pairs.push((x[k], y[k]));
                            }
                        }
                    }
                    for (x, y) in pairs {
                        lp.add_row(vec![(x, 1.0), (y, -1.0)], Sense::Eq, 0.0);
                    }
                }
            }
        }
        Self { lp, leaves }
    }

    /// Expected leader profit of a point.
    pub fn profit(&self, inst: &Instance, prices: &[f64], x: &[f64]) -> f64 {
        let k = &inst.prices.supply_cost;
        let mut total = 0.0;
        for (leaf, &prob) in self.leaves.iter().zip(&inst.tree.probabilities) {
            for h in 0..inst.horizon {
                let mut bought = x[leaf.store[h][0]];
                for row in &leaf.device {
                    if let Some(ids) = row[h] {
                        bought += x[ids[0]];
                    }
                }
                total += prob * (prices[h] - k[h]) * bought;
            }
        }
        total
    }
}

/// Follower optimum at `prices` and the leader profit of the follower
/// response that favours the leader.
pub fn optimistic(inst: &Instance, prices: &[f64]) -> (f64, f64) {
    let oracle = OracleLp::new(inst, prices);
    let first = solve_lp(&oracle.lp).unwrap();
    assert_eq!(first.status, LpStatus::Optimal);
    let best = first.objective;
    let mut lp = oracle.lp.clone();
    let cost: Vec<(usize, f64)> =
        lp.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| (j, *c)).collect();
    lp.add_row(cost, Sense::Le, best + 1e-9 * (1.0 + best.abs()));
    // Profit is linear in x once prices are fixed.
    let unit = {
        let mut probe = vec![0.0; lp.num_cols()];
        let mut obj = vec![0.0; lp.num_cols()];
        for j in 0..lp.num_cols() {
            probe[j] = 1.0;
            obj[j] = oracle.profit(inst, prices, &probe);
            probe[j] = 0.0;
        }
        obj
    };
    lp.objective = unit;
    lp.sense = ObjectiveSense::Maximize;
    let second = solve_lp(&lp).unwrap();
    assert_eq!(second.status, LpStatus::Optimal);
    (best, oracle.profit(inst, prices, &second.x))
}

/// Slots whose price can change anything: a device may buy there, or the
/// battery can store.
pub fn relevant_slots(inst: &Instance) -> Vec<usize> {
    (0..inst.horizon)
        .filter(|&h| inst.battery.max_level > 0.0 || inst.devices.iter().any(|d| d.window.contains(h)))
        .collect()
}

/// Best optimistic profit over prices on the grid `k * step * pbar`,
/// `k = 0..=1/step`, for relevant slots; other slots stay at `pbar`.
pub fn grid_oracle(inst: &Instance, step: f64) -> (f64, Vec<f64>) {
    let slots = relevant_slots(inst);
    let levels = (1.0 / step).round() as usize + 1;
    let pbar = &inst.prices.competitor;
    let mut best = (f64::NEG_INFINITY, pbar.clone());
    let mut idx = vec![0usize; slots.len()];
    loop {
        let mut prices = pbar.clone();
        for (&h, &k) in slots.iter().zip(&idx) {
            prices[h] = (k as f64 * step).min(1.0) * pbar[h];
        }
        let (_, profit) = optimistic(inst, &prices);
        if profit > best.0 {
            best = (profit, prices);
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] < levels {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}
