//! The follower's scheduling LP over a scenario tree.
//!
//! Every column and row carries a tag with its role and (scenario, device,
//! slot) coordinates. The single-level model pairs rows and columns through
//! these tags, so the dual side is derived from the matrix itself rather
//! than written out by hand.

use serde::{Deserialize, Serialize};

use sbpp_solver::{BackendRegistry, LinearProgram, LpStatus, ObjectiveSense, Sense, Tolerances};

use crate::error::{CoreError, Result};
use crate::model::{Instance, PriceProfile};
use crate::scenario::{nonanticipativity_pairs, NaPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// Bought from the leader for a device.
    Leader,
    /// Bought from the competitor for a device.
    Competitor,
    /// DG used by a device.
    Dg,
    /// Battery discharge used by a device.
    Discharge,
    /// Bought from the leader into the battery.
    StoreLeader,
    StoreCompetitor,
    StoreDg,
    /// Battery level at the start of a slot.
    State,
}

pub const DEVICE_KINDS: [VarKind; 4] = [VarKind::Leader, VarKind::Competitor, VarKind::Dg, VarKind::Discharge];
pub const STORAGE_KINDS: [VarKind; 3] = [VarKind::StoreLeader, VarKind::StoreCompetitor, VarKind::StoreDg];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarTag {
    pub kind: VarKind,
    pub scenario: usize,
    pub device: Option<usize>,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Total energy over the window reaches the demand.
    Demand,
    /// Per-slot device power cap.
    Power,
    /// Battery starts at its initial level.
    Initial,
    /// Battery level recursion.
    Dynamics,
    StateMin,
    StateMax,
    /// Discharge limited by the level at the start of the slot.
    DischargeCap,
    /// DG use limited by availability.
    DgCap,
    NonAnticipativity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowTag {
    pub kind: RowKind,
    pub scenario: usize,
    pub device: Option<usize>,
    pub slot: Option<usize>,
    /// Second scenario of a nonanticipativity row.
    pub partner: Option<usize>,
}

#[derive(Debug, Clone)]
struct ScenarioCols {
    /// First column of each device block (4 columns per window slot).
    device_start: Vec<usize>,
    storage_start: usize,
    state_start: usize,
}

/// The follower LP with its tags.
#[derive(Debug, Clone)]
pub struct FollowerLp {
    pub lp: LinearProgram,
    pub cols: Vec<VarTag>,
    pub rows: Vec<RowTag>,
    /// Objective coefficients without the leader-price part.
    pub base_cost: Vec<f64>,
    /// `(slot, weight)` for columns billed at the leader price.
    pub price_terms: Vec<Option<(usize, f64)>>,
    pub probabilities: Vec<f64>,
    pub na_pairs: Vec<NaPair>,
    horizon: usize,
    windows: Vec<(usize, usize)>,
    layout: Vec<ScenarioCols>,
}

impl FollowerLp {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_scenarios(&self) -> usize {
        self.layout.len()
    }

    /// Column of a device variable at absolute slot `h`.
    pub fn device_col(&self, scenario: usize, device: usize, kind: VarKind, h: usize) -> usize {
        let k = DEVICE_KINDS.iter().position(|&x| x == kind).expect("device kind");
        let (first, last) = self.windows[device];
        debug_assert!((first..=last).contains(&h));
        self.layout[scenario].device_start[device] + 4 * (h - first) + k
    }

    pub fn storage_col(&self, scenario: usize, kind: VarKind, h: usize) -> usize {
        let k = STORAGE_KINDS.iter().position(|&x| x == kind).expect("storage kind");
        self.layout[scenario].storage_start + 3 * h + k
    }

    pub fn state_col(&self, scenario: usize, h: usize) -> usize {
        self.layout[scenario].state_start + h
    }

    pub fn is_inequality(&self, row: usize) -> bool {
        self.lp.rows[row].sense != Sense::Eq
    }

    pub fn num_inequalities(&self) -> usize {
        (0..self.lp.num_rows()).filter(|&i| self.is_inequality(i)).count()
    }

    /// Put the leader prices into the objective.
    pub fn set_prices(&mut self, prices: &PriceProfile) -> Result<()> {
        if prices.leader.len() != self.horizon {
            return Err(CoreError::Dimension(format!("{} prices for {} slots", prices.leader.len(), self.horizon)));
        }
        for j in 0..self.cols.len() {
            self.lp.objective[j] = self.base_cost[j] + self.price_terms[j].map_or(0.0, |(h, w)| w * prices.leader[h]);
        }
        Ok(())
    }

    /// Flip `<=` rows to `>=` form: the sign applied to a row so that its
    /// multiplier is nonnegative in a minimization.
    pub fn row_sign(&self, row: usize) -> f64 {
        match self.lp.rows[row].sense {
            Sense::Le => -1.0,
            _ => 1.0,
        }
    }

    pub fn decode(&self, x: &[f64]) -> FollowerSolution {
        let objective = self.lp.evaluate(x);
        let scenarios = (0..self.num_scenarios())
            .map(|s| {
                let devices = self
                    .windows
                    .iter()
                    .enumerate()
                    .map(|(d, &(first, last))| {
                        let pick = |kind| (first..=last).map(|h| x[self.device_col(s, d, kind, h)]).collect();
                        DeviceSchedule {
                            first,
                            leader: pick(VarKind::Leader),
                            competitor: pick(VarKind::Competitor),
                            dg: pick(VarKind::Dg),
                            discharge: pick(VarKind::Discharge),
                        }
                    })
                    .collect();
                let pick = |kind| (0..self.horizon).map(|h| x[self.storage_col(s, kind, h)]).collect();
                ScenarioSchedule {
                    devices,
                    store_leader: pick(VarKind::StoreLeader),
                    store_competitor: pick(VarKind::StoreCompetitor),
                    store_dg: pick(VarKind::StoreDg),
                    state: (0..=self.horizon).map(|h| x[self.state_col(s, h)]).collect(),
                }
            })
            .collect();
        FollowerSolution { scenarios, objective }
    }

    /// Inverse of [`Self::decode`].
    pub fn encode(&self, sol: &FollowerSolution) -> Result<Vec<f64>> {
        if sol.scenarios.len() != self.num_scenarios() {
            return Err(CoreError::Dimension(format!(
                "{} scenario schedules for {} scenarios",
                sol.scenarios.len(),
                self.num_scenarios()
            )));
        }
        let mut x = vec![0.0; self.cols.len()];
        for (s, sc) in sol.scenarios.iter().enumerate() {
            if sc.devices.len() != self.windows.len() || sc.state.len() != self.horizon + 1 {
                return Err(CoreError::Dimension(format!("scenario {s} schedule has the wrong shape")));
            }
            for (d, ds) in sc.devices.iter().enumerate() {
                let (first, last) = self.windows[d];
                if ds.first != first || ds.leader.len() != last + 1 - first {
                    return Err(CoreError::Dimension(format!("device {d} schedule does not match its window")));
                }
                for (k, h) in (first..=last).enumerate() {
                    x[self.device_col(s, d, VarKind::Leader, h)] = ds.leader[k];
                    x[self.device_col(s, d, VarKind::Competitor, h)] = ds.competitor[k];
                    x[self.device_col(s, d, VarKind::Dg, h)] = ds.dg[k];
                    x[self.device_col(s, d, VarKind::Discharge, h)] = ds.discharge[k];
                }
            }
            for h in 0..self.horizon {
                x[self.storage_col(s, VarKind::StoreLeader, h)] = sc.store_leader[h];
                x[self.storage_col(s, VarKind::StoreCompetitor, h)] = sc.store_competitor[h];
                x[self.storage_col(s, VarKind::StoreDg, h)] = sc.store_dg[h];
            }
            for h in 0..=self.horizon {
                x[self.state_col(s, h)] = sc.state[h];
            }
        }
        Ok(x)
    }

    /// Group normalized row multipliers (see [`Self::row_sign`]) by family.
    pub fn decode_duals(&self, u: &[f64]) -> FollowerDuals {
        let n = self.num_scenarios();
        let t = self.horizon;
        let mut d = FollowerDuals {
            demand: vec![vec![0.0; self.windows.len()]; n],
            power: (0..n)
                .map(|_| self.windows.iter().map(|&(f, l)| vec![0.0; l + 1 - f]).collect())
                .collect(),
            initial: vec![0.0; n],
            dynamics: vec![vec![0.0; t]; n],
            state_min: vec![vec![0.0; t + 1]; n],
            state_max: vec![vec![0.0; t + 1]; n],
            discharge_cap: vec![vec![0.0; t]; n],
            dg_cap: vec![vec![0.0; t]; n],
            nonanticipativity: Vec::new(),
        };
        for (i, tag) in self.rows.iter().enumerate() {
            let s = tag.scenario;
            let v = u[i];
            match tag.kind {
                RowKind::Demand => d.demand[s][tag.device.unwrap()] = v,
                RowKind::Power => {
                    let dev = tag.device.unwrap();
                    d.power[s][dev][tag.slot.unwrap() - self.windows[dev].0] = v;
                }
                RowKind::Initial => d.initial[s] = v,
                RowKind::Dynamics => d.dynamics[s][tag.slot.unwrap()] = v,
                RowKind::StateMin => d.state_min[s][tag.slot.unwrap()] = v,
                RowKind::StateMax => d.state_max[s][tag.slot.unwrap()] = v,
                RowKind::DischargeCap => d.discharge_cap[s][tag.slot.unwrap()] = v,
                RowKind::DgCap => d.dg_cap[s][tag.slot.unwrap()] = v,
                RowKind::NonAnticipativity => d.nonanticipativity.push(v),
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSchedule {
    /// Absolute slot of the first entry.
    pub first: usize,
    pub leader: Vec<f64>,
    pub competitor: Vec<f64>,
    pub dg: Vec<f64>,
    pub discharge: Vec<f64>,
}

impl DeviceSchedule {
    pub fn consumption(&self, k: usize) -> f64 {
        self.leader[k] + self.competitor[k] + self.dg[k] + self.discharge[k]
    }

    pub fn total(&self) -> f64 {
        (0..self.leader.len()).map(|k| self.consumption(k)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSchedule {
    pub devices: Vec<DeviceSchedule>,
    pub store_leader: Vec<f64>,
    pub store_competitor: Vec<f64>,
    pub store_dg: Vec<f64>,
    /// Levels at slots `0..=H+1`.
    pub state: Vec<f64>,
}

impl ScenarioSchedule {
    /// Energy bought from the leader at slot `h`, devices plus battery.
    pub fn leader_purchase(&self, h: usize) -> f64 {
        self.store_leader[h] + self.device_sum(h, |d, k| d.leader[k])
    }

    pub fn competitor_purchase(&self, h: usize) -> f64 {
        self.store_competitor[h] + self.device_sum(h, |d, k| d.competitor[k])
    }

    pub fn dg_use(&self, h: usize) -> f64 {
        self.store_dg[h] + self.device_sum(h, |d, k| d.dg[k])
    }

    pub fn discharge(&self, h: usize) -> f64 {
        self.device_sum(h, |d, k| d.discharge[k])
    }

    pub fn consumption(&self, h: usize) -> f64 {
        self.device_sum(h, |d, k| d.consumption(k))
    }

    fn device_sum(&self, h: usize, f: impl Fn(&DeviceSchedule, usize) -> f64) -> f64 {
        self.devices
            .iter()
            .filter(|d| h >= d.first && h < d.first + d.leader.len())
            .map(|d| f(d, h - d.first))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerSolution {
    pub scenarios: Vec<ScenarioSchedule>,
    /// Expected generalized cost.
    pub objective: f64,
}

/// Row multipliers in `>=` form (inequalities nonnegative, equalities free).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerDuals {
    pub demand: Vec<Vec<f64>>,
    pub power: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
    pub dynamics: Vec<Vec<f64>>,
    pub state_min: Vec<Vec<f64>>,
    pub state_max: Vec<Vec<f64>>,
    pub discharge_cap: Vec<Vec<f64>>,
    pub dg_cap: Vec<Vec<f64>>,
    pub nonanticipativity: Vec<f64>,
}

pub fn build_follower_lp(instance: &Instance, prices: &PriceProfile) -> Result<FollowerLp> {
    let t = instance.horizon;
    if prices.leader.len() != t {
        return Err(CoreError::Dimension(format!("{} prices for {t} slots", prices.leader.len())));
    }
    if instance.tree.horizon() != t {
        return Err(CoreError::Dimension(format!("tree has {} slots, instance {t}", instance.tree.horizon())));
    }
    let tree = &instance.tree;
    let bat = &instance.battery;
    let pbar = &instance.prices.competitor;
    let windows: Vec<(usize, usize)> = instance.devices.iter().map(|d| (d.window.first, d.window.last)).collect();
    if windows.iter().any(|&(f, l)| f > l || l >= t) {
        return Err(CoreError::Dimension("device window outside the horizon".into()));
    }

    let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
    let mut cols = Vec::new();
    let mut base_cost = Vec::new();
    let mut price_terms = Vec::new();
    let mut layout = Vec::new();
    let mut add = |lp: &mut LinearProgram, tag: VarTag, base: f64, price: Option<(usize, f64)>| {
        let name = match tag.device {
            Some(d) => format!("{:?}_s{}_d{}_h{}", tag.kind, tag.scenario, d, tag.slot),
            None => format!("{:?}_s{}_h{}", tag.kind, tag.scenario, tag.slot),
        };
        let j = lp.add_named_col(name, 0.0, f64::INFINITY, base);
        cols.push(tag);
        base_cost.push(base);
        price_terms.push(price);
        j
    };

    for (s, &p) in tree.probabilities.iter().enumerate() {
        let mut device_start = Vec::with_capacity(instance.devices.len());
        for (d, dev) in instance.devices.iter().enumerate() {
            device_start.push(lp.num_cols());
            for h in dev.window.slots() {
                let c = dev.inconvenience_at(h);
                for kind in DEVICE_KINDS {
                    let tag = VarTag { kind, scenario: s, device: Some(d), slot: h };
                    let (base, price) = match kind {
                        VarKind::Leader => (p * c, Some((h, p))),
                        VarKind::Competitor => (p * (c + pbar[h]), None),
                        _ => (p * c, None),
                    };
                    add(&mut lp, tag, base, price);
                }
            }
        }
        let storage_start = lp.num_cols();
        for h in 0..t {
            for kind in STORAGE_KINDS {
                let tag = VarTag { kind, scenario: s, device: None, slot: h };
                let (base, price) = match kind {
                    VarKind::StoreLeader => (0.0, Some((h, p))),
                    VarKind::StoreCompetitor => (p * pbar[h], None),
                    _ => (0.0, None),
                };
                add(&mut lp, tag, base, price);
            }
        }
        let state_start = lp.num_cols();
        for h in 0..=t {
            add(&mut lp, VarTag { kind: VarKind::State, scenario: s, device: None, slot: h }, 0.0, None);
        }
        layout.push(ScenarioCols { device_start, storage_start, state_start });
    }

    let mut flp = FollowerLp {
        lp,
        cols,
        rows: Vec::new(),
        base_cost,
        price_terms,
        probabilities: tree.probabilities.clone(),
        na_pairs: Vec::new(),
        horizon: t,
        windows,
        layout,
    };
    let mut rows = Vec::new();
    let mut push = |lp: &mut LinearProgram, tag: RowTag, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64| {
        let name = format!(
            "{:?}_s{}{}{}{}",
            tag.kind,
            tag.scenario,
            tag.device.map_or(String::new(), |d| format!("_d{d}")),
            tag.slot.map_or(String::new(), |h| format!("_h{h}")),
            tag.partner.map_or(String::new(), |q| format!("_p{q}")),
        );
        lp.add_named_row(name, coeffs, sense, rhs);
        rows.push(tag);
    };
    let mut lp = std::mem::replace(&mut flp.lp, LinearProgram::new(ObjectiveSense::Minimize));
    let row = |kind, s, device, slot| RowTag { kind, scenario: s, device, slot, partner: None };

    for s in 0..flp.num_scenarios() {
        let dg = &tree.leaves[s].dg_bound;
        for (d, dev) in instance.devices.iter().enumerate() {
            let coeffs = dev
                .window
                .slots()
                .flat_map(|h| DEVICE_KINDS.map(|k| (flp.device_col(s, d, k, h), 1.0)))
                .collect();
            push(&mut lp, row(RowKind::Demand, s, Some(d), None), coeffs, Sense::Ge, dev.energy_demand);
        }
        for (d, dev) in instance.devices.iter().enumerate() {
            for h in dev.window.slots() {
                let coeffs = DEVICE_KINDS.map(|k| (flp.device_col(s, d, k, h), 1.0)).to_vec();
                push(&mut lp, row(RowKind::Power, s, Some(d), Some(h)), coeffs, Sense::Le, dev.max_power);
            }
        }
        push(&mut lp, row(RowKind::Initial, s, None, Some(0)), vec![(flp.state_col(s, 0), 1.0)], Sense::Eq, bat.initial);
        for h in 0..t {
            let mut coeffs = vec![(flp.state_col(s, h + 1), 1.0), (flp.state_col(s, h), -bat.discharge_eff)];
            coeffs.extend(flp.active_devices(h).map(|d| (flp.device_col(s, d, VarKind::Discharge, h), 1.0)));
            coeffs.extend(STORAGE_KINDS.map(|k| (flp.storage_col(s, k, h), -bat.charge_eff)));
            push(&mut lp, row(RowKind::Dynamics, s, None, Some(h)), coeffs, Sense::Eq, 0.0);
        }
        for h in 0..=t {
            push(&mut lp, row(RowKind::StateMin, s, None, Some(h)), vec![(flp.state_col(s, h), 1.0)], Sense::Ge, bat.min_level);
        }
        for h in 0..=t {
            push(&mut lp, row(RowKind::StateMax, s, None, Some(h)), vec![(flp.state_col(s, h), 1.0)], Sense::Le, bat.max_level);
        }
        for h in 0..t {
            let mut coeffs: Vec<(usize, f64)> =
                flp.active_devices(h).map(|d| (flp.device_col(s, d, VarKind::Discharge, h), 1.0)).collect();
            coeffs.push((flp.state_col(s, h), -1.0));
            push(&mut lp, row(RowKind::DischargeCap, s, None, Some(h)), coeffs, Sense::Le, 0.0);
        }
        for h in 0..t {
            let mut coeffs: Vec<(usize, f64)> =
                flp.active_devices(h).map(|d| (flp.device_col(s, d, VarKind::Dg, h), 1.0)).collect();
            coeffs.push((flp.storage_col(s, VarKind::StoreDg, h), 1.0));
            push(&mut lp, row(RowKind::DgCap, s, None, Some(h)), coeffs, Sense::Le, dg[h]);
        }
    }

    let pairs = nonanticipativity_pairs(tree);
    for pair in &pairs {
        let (a, b) = (pair.a, pair.b);
        let tag = |h| RowTag { kind: RowKind::NonAnticipativity, scenario: a, device: None, slot: Some(h), partner: Some(b) };
        for h in 0..=pair.h_max {
            for d in flp.active_devices(h).collect::<Vec<_>>() {
                for k in DEVICE_KINDS {
                    let coeffs = vec![(flp.device_col(a, d, k, h), 1.0), (flp.device_col(b, d, k, h), -1.0)];
                    let mut tg = tag(h);
                    tg.device = Some(d);
                    push(&mut lp, tg, coeffs, Sense::Eq, 0.0);
                }
            }
            for k in STORAGE_KINDS {
                let coeffs = vec![(flp.storage_col(a, k, h), 1.0), (flp.storage_col(b, k, h), -1.0)];
                push(&mut lp, tag(h), coeffs, Sense::Eq, 0.0);
            }
            let coeffs = vec![(flp.state_col(a, h), 1.0), (flp.state_col(b, h), -1.0)];
            push(&mut lp, tag(h), coeffs, Sense::Eq, 0.0);
        }
    }

    flp.lp = lp;
    flp.rows = rows;
    flp.na_pairs = pairs;
    flp.set_prices(prices)?;
    Ok(flp)
}

impl FollowerLp {
    fn active_devices(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        self.windows.iter().enumerate().filter(move |(_, &(f, l))| f <= h && h <= l).map(|(d, _)| d)
    }
}

/// Solve with the bundled simplex.
pub fn solve_follower(flp: &FollowerLp) -> Result<(FollowerSolution, FollowerDuals)> {
    solve_follower_with(flp, &BackendRegistry::default())
}

pub fn solve_follower_with(flp: &FollowerLp, backends: &BackendRegistry) -> Result<(FollowerSolution, FollowerDuals)> {
    let sol = backends.solve_lp(&flp.lp, &Tolerances::DEFAULT)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(CoreError::FollowerInfeasible),
        LpStatus::Unbounded => return Err(CoreError::FollowerUnbounded),
    }
    let u: Vec<f64> = sol.duals.iter().enumerate().map(|(i, y)| flp.row_sign(i) * y).collect();
    Ok((flp.decode(&sol.x), flp.decode_duals(&u)))
}

/// Normalized multipliers as a flat vector in row order.
pub fn flat_duals(flp: &FollowerLp, duals: &FollowerDuals) -> Vec<f64> {
    let mut na = duals.nonanticipativity.iter();
    flp.rows
        .iter()
        .map(|tag| {
            let s = tag.scenario;
            match tag.kind {
                RowKind::Demand => duals.demand[s][tag.device.unwrap()],
                RowKind::Power => {
                    let d = tag.device.unwrap();
                    duals.power[s][d][tag.slot.unwrap() - flp.windows[d].0]
                }
                RowKind::Initial => duals.initial[s],
                RowKind::Dynamics => duals.dynamics[s][tag.slot.unwrap()],
                RowKind::StateMin => duals.state_min[s][tag.slot.unwrap()],
                RowKind::StateMax => duals.state_max[s][tag.slot.unwrap()],
                RowKind::DischargeCap => duals.discharge_cap[s][tag.slot.unwrap()],
                RowKind::DgCap => duals.dg_cap[s][tag.slot.unwrap()],
                RowKind::NonAnticipativity => *na.next().expect("one multiplier per row"),
            }
        })
        .collect()
}

/// Dual objective `b·u` in normalized form.
pub fn dual_objective(flp: &FollowerLp, u: &[f64]) -> f64 {
    flp.lp.rows.iter().enumerate().map(|(i, r)| flp.row_sign(i) * r.rhs * u[i]).sum()
}

/// Reduced costs `c - A^T u` in normalized form.
pub fn reduced_costs(flp: &FollowerLp, u: &[f64]) -> Vec<f64> {
    let mut r = flp.lp.objective.clone();
    for (i, row) in flp.lp.rows.iter().enumerate() {
        let w = flp.row_sign(i) * u[i];
        for &(j, a) in &row.coeffs {
            r[j] -= a * w;
        }
    }
    r
}

/// Worst violation of dual feasibility and complementary slackness for the
/// pair `(x, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub duality_gap: f64,
}

pub fn kkt_residual(flp: &FollowerLp, x: &[f64], u: &[f64]) -> KktResidual {
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;
    for (i, row) in flp.lp.rows.iter().enumerate() {
        if row.sense != Sense::Eq {
            dual = dual.max(-u[i]);
            let slack = flp.row_sign(i) * (row.activity(x) - row.rhs);
            comp = comp.max((slack * u[i]).abs());
        }
    }
    for (j, r) in reduced_costs(flp, u).into_iter().enumerate() {
        dual = dual.max(-r);
        comp = comp.max((x[j] * r).abs());
    }
    KktResidual {
        primal: flp.lp.max_violation(x),
        dual: dual.max(0.0),
        complementarity: comp,
        duality_gap: (flp.lp.evaluate(x) - dual_objective(flp, u)).abs(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCost {
    pub billing: f64,
    pub inconvenience: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub billing: f64,
    pub inconvenience: f64,
    pub generalized: f64,
    pub per_scenario: Vec<ScenarioCost>,
}

/// Expected billing and inconvenience cost of a schedule.
pub fn evaluate_schedule(instance: &Instance, prices: &PriceProfile, sol: &FollowerSolution) -> CostBreakdown {
    let pbar = &instance.prices.competitor;
    let per_scenario: Vec<ScenarioCost> = sol
        .scenarios
        .iter()
        .map(|sc| {
            let mut billing = 0.0;
            for h in 0..instance.horizon {
                billing += prices.leader[h] * sc.leader_purchase(h) + pbar[h] * sc.competitor_purchase(h);
            }
            let mut inconvenience = 0.0;
            for (dev, ds) in instance.devices.iter().zip(&sc.devices) {
                for (k, c) in dev.inconvenience.iter().enumerate() {
                    inconvenience += c * ds.consumption(k);
                }
            }
            ScenarioCost { billing, inconvenience }
        })
        .collect();
    let probs = probabilities_for(instance, sol);
    let billing: f64 = per_scenario.iter().zip(&probs).map(|(c, p)| p * c.billing).sum();
    let inconvenience: f64 = per_scenario.iter().zip(&probs).map(|(c, p)| p * c.inconvenience).sum();
    CostBreakdown { billing, inconvenience, generalized: billing + inconvenience, per_scenario }
}

/// Expected leader profit `sum P (p - K)(x + x_s)`.
pub fn leader_profit(instance: &Instance, prices: &PriceProfile, sol: &FollowerSolution) -> f64 {
    let k = &instance.prices.supply_cost;
    let probs = probabilities_for(instance, sol);
    sol.scenarios
        .iter()
        .zip(&probs)
        .map(|(sc, p)| p * (0..instance.horizon).map(|h| (prices.leader[h] - k[h]) * sc.leader_purchase(h)).sum::<f64>())
        .sum()
}

fn probabilities_for(instance: &Instance, sol: &FollowerSolution) -> Vec<f64> {
    if sol.scenarios.len() == instance.tree.num_leaves() {
        instance.tree.probabilities.clone()
    } else {
        vec![1.0 / sol.scenarios.len().max(1) as f64; sol.scenarios.len()]
    }
}

/// Follower response that is optimal for the follower and, among those,
/// best for the leader. Returns the schedule and the leader's profit.
pub fn optimistic_response(instance: &Instance, prices: &PriceProfile) -> Result<(FollowerSolution, f64)> {
    let flp = build_follower_lp(instance, prices)?;
    let (schedule, profit, _) = optimistic_point(&flp, instance, prices)?;
    Ok((schedule, profit))
}

/// As [`optimistic_response`] on an already priced LP; also returns the
/// raw column values.
pub fn optimistic_point(
    flp: &FollowerLp,
    instance: &Instance,
    prices: &PriceProfile,
) -> Result<(FollowerSolution, f64, Vec<f64>)> {
    let first = sbpp_solver::solve_lp(&flp.lp)?;
    match first.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(CoreError::FollowerInfeasible),
        LpStatus::Unbounded => return Err(CoreError::FollowerUnbounded),
    }
    let value = first.objective;
    let mut lp = flp.lp.clone();
    let cost: Vec<(usize, f64)> = lp.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| (j, *c)).collect();
    lp.add_row(cost, Sense::Le, value + 1e-9 * (1.0 + value.abs()));
    let k = &instance.prices.supply_cost;
    for j in 0..lp.num_cols() {
        lp.objective[j] = flp.price_terms[j].map_or(0.0, |(h, w)| w * (prices.leader[h] - k[h]));
    }
    lp.sense = ObjectiveSense::Maximize;
    let sol = sbpp_solver::solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(CoreError::Extraction(format!("optimistic re-solve ended {:?}", sol.status)));
    }
    let mut schedule = flp.decode(&sol.x);
    schedule.objective = flp.lp.evaluate(&sol.x);
    let profit = leader_profit(instance, prices, &schedule);
    Ok((schedule, profit, sol.x))
}

/// Multipliers certifying that `y` is optimal for the priced LP, chosen to
/// keep the largest multiplier or reduced cost as small as possible.
/// Returns the normalized multipliers and that largest magnitude, or `None`
/// when `y` is not optimal.
pub fn min_norm_certificate(flp: &FollowerLp, y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = flp.lp.num_rows();
    let n = flp.cols.len();
    let mut lp = LinearProgram::new(ObjectiveSense::Minimize);
    const WIDE: f64 = 1e9;
    for i in 0..m {
        let lower = if flp.is_inequality(i) { 0.0 } else { -WIDE };
        lp.add_col(lower, WIDE, 0.0);
    }
    let t = lp.add_col(0.0, WIDE, 1.0);
    let mut at: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in flp.lp.rows.iter().enumerate() {
        let s = flp.row_sign(i);
        for &(j, a) in &row.coeffs {
            at[j].push((i, s * a));
        }
    }
    for (j, col) in at.iter().enumerate() {
        let c = flp.lp.objective[j];
        lp.add_row(col.clone(), Sense::Le, c);
        let mut coeffs: Vec<(usize, f64)> = col.iter().map(|&(i, v)| (i, -v)).collect();
        coeffs.push((t, -1.0));
        lp.add_row(coeffs, Sense::Le, -c);
    }
    for i in 0..m {
        lp.add_row(vec![(i, 1.0), (t, -1.0)], Sense::Le, 0.0);
        if !flp.is_inequality(i) {
            lp.add_row(vec![(i, -1.0), (t, -1.0)], Sense::Le, 0.0);
        }
    }
    let primal = flp.lp.evaluate(y);
    let b: Vec<(usize, f64)> = flp.lp.rows.iter().enumerate().map(|(i, r)| (i, flp.row_sign(i) * r.rhs)).collect();
    lp.add_row(b, Sense::Ge, primal - 1e-9 * (1.0 + primal.abs()));
    let sol = sbpp_solver::solve_lp(&lp).ok()?;
    if sol.status != LpStatus::Optimal {
        return None;
    }
    Some((sol.x[..m].to_vec(), sol.x[t]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Battery, Device, PriceData, TimeWindow};
    use crate::scenario::ScenarioTree;

    fn t1(c: [f64; 2]) -> Instance {
        Instance {
            horizon: 2,
            slot_minutes: 30,
            devices: vec![Device {
                client_id: 0,
                appliance_id: 0,
                window: TimeWindow::new(0, 1),
                energy_demand: 2.0,
                max_power: 2.0,
                inconvenience: c.to_vec(),
            }],
            battery: Battery::none(),
            prices: PriceData { competitor: vec![3.0, 3.0], supply_cost: vec![2.5, 1.0] },
            tree: ScenarioTree::single(vec![0.0, 0.0]).unwrap(),
        }
    }

    #[test]
    fn t1_counts_and_solution() {
        let inst = t1([0.0, 0.1]);
        let flp = build_follower_lp(&inst, &PriceProfile::competitor(&inst)).unwrap();
        let device_cols = flp.cols.iter().filter(|c| c.device.is_some()).count();
        assert_eq!(device_cols, 8);
        assert_eq!(flp.rows.iter().filter(|r| r.kind == RowKind::Demand).count(), 1);
        assert_eq!(flp.rows.iter().filter(|r| r.kind == RowKind::Power).count(), 2);
        let (sol, duals) = solve_follower(&flp).unwrap();
        assert!((sol.objective - 6.0).abs() < 1e-9);
        let d = &sol.scenarios[0].devices[0];
        assert!((d.leader[0] + d.competitor[0] - 2.0).abs() < 1e-9);
        let cost = evaluate_schedule(&inst, &PriceProfile::competitor(&inst), &sol);
        assert!((cost.billing - 6.0).abs() < 1e-9 && cost.inconvenience.abs() < 1e-12);
        let u = flat_duals(&flp, &duals);
        let x = flp.encode(&sol).unwrap();
        let r = kkt_residual(&flp, &x, &u);
        assert!(r.dual < 1e-9 && r.complementarity < 1e-9 && r.duality_gap < 1e-9, "{r:?}");
    }

    #[test]
    fn shifted_schedule_cost() {
        let inst = t1([0.0, 0.1]);
        let flp = build_follower_lp(&inst, &PriceProfile::competitor(&inst)).unwrap();
        let (mut sol, _) = solve_follower(&flp).unwrap();
        let d = &mut sol.scenarios[0].devices[0];
        d.leader = vec![0.0, 2.0];
        d.competitor = vec![0.0, 0.0];
        let cost = evaluate_schedule(&inst, &PriceProfile::competitor(&inst), &sol);
        assert!((cost.billing - 6.0).abs() < 1e-12);
        assert!((cost.inconvenience - 0.2).abs() < 1e-12);
        assert!((cost.generalized - 6.2).abs() < 1e-12);
    }

    #[test]
    fn two_scenarios_pair_slot_zero() {
        let mut inst = t1([0.0, 0.1]);
        inst.tree = ScenarioTree::base_only(vec![vec![0.0, 1.0], vec![0.0, 0.0]], crate::scenario::ProbRule::Uniform).unwrap();
        let flp = build_follower_lp(&inst, &PriceProfile::competitor(&inst)).unwrap();
        let na: Vec<_> = flp.rows.iter().filter(|r| r.kind == RowKind::NonAnticipativity).collect();
        // 4 device, 3 storage and 1 state equality at slot 0.
        assert_eq!(na.len(), 8);
        assert!(na.iter().all(|r| r.slot == Some(0)));
    }

    #[test]
    fn encode_decode_round_trip() {
        let inst = t1([0.0, 0.1]);
        let flp = build_follower_lp(&inst, &PriceProfile::competitor(&inst)).unwrap();
        let x: Vec<f64> = (0..flp.cols.len()).map(|j| j as f64).collect();
        assert_eq!(flp.encode(&flp.decode(&x)).unwrap(), x);
    }
}
