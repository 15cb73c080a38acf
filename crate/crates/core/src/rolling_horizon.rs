//! Rolling-horizon loop: solve a short window, commit its first steps under
//! the realized scenario, move on.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbpp_solver::{BackendRegistry, MilpStatus};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::follower_lp::{DeviceSchedule, ScenarioSchedule};
use crate::model::{Device, Instance, PriceData, PriceProfile, TimeWindow};
use crate::reformulation::{solve_bilevel, BilevelOptions};
use crate::scenario::{realize_next, MarkovSelector, ProbRule, ScenarioTree};

const TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhConfig {
    pub l_rh: usize,
    pub s_rh: usize,
    pub l_fh: usize,
    pub time_limit_s: f64,
    pub rel_gap: f64,
    pub selector: MarkovSelector,
    pub seed: u64,
}

impl RhConfig {
    /// Validated configuration. The frozen prefix plus one step must fit in
    /// the window, since each iteration commits prices the next one pins.
    pub fn new(l_rh: usize, s_rh: usize, l_fh: usize) -> Result<Self> {
        let cfg = Self {
            l_rh,
            s_rh,
            l_fh,
            time_limit_s: 60.0,
            rel_gap: 1e-9,
            selector: MarkovSelector::default(),
            seed: 0,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.l_rh == 0 || self.s_rh == 0 {
            return Err(CoreError::Config("window and step must be at least one slot".into()));
        }
        if self.s_rh > self.l_rh {
            return Err(CoreError::Config(format!("step {} longer than window {}", self.s_rh, self.l_rh)));
        }
        if self.l_fh + self.s_rh > self.l_rh {
            return Err(CoreError::Config(format!(
                "frozen length {} plus step {} exceeds window {}",
                self.l_fh, self.s_rh, self.l_rh
            )));
        }
        if !(self.time_limit_s > 0.0) || !(self.rel_gap >= 0.0) {
            return Err(CoreError::Config("time limit must be positive and gap nonnegative".into()));
        }
        Ok(())
    }

    fn options(&self, scale: f64) -> BilevelOptions {
        let mut opts = BilevelOptions::default();
        opts.solve.time_limit = Duration::from_secs_f64(self.time_limit_s * scale);
        opts.solve.rel_gap_target = self.rel_gap;
        opts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub t: usize,
    pub window: TimeWindow,
    pub status: String,
    pub gap: f64,
    pub runtime_s: f64,
    pub leader_obj: f64,
    pub follower_obj: f64,
    pub realized_base: usize,
    /// Prices pinned in this iteration, by absolute slot.
    pub pinned: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhTrajectory {
    pub realized_bases: Vec<usize>,
    pub frozen_prices: Vec<f64>,
    /// DG bound per slot under the realized path.
    pub realized_dg: Vec<f64>,
    pub schedule: ScenarioSchedule,
    pub log: Vec<IterationLog>,
    /// False when an iteration failed and the run stopped early.
    pub complete: bool,
    pub diagnostic: Option<String>,
}

impl RhTrajectory {
    pub fn prices(&self) -> PriceProfile {
        PriceProfile { leader: self.frozen_prices.clone() }
    }

    /// Realized leader profit `sum (p - K) x`.
    pub fn leader_profit(&self, instance: &Instance) -> f64 {
        (0..instance.horizon)
            .map(|h| (self.frozen_prices[h] - instance.prices.supply_cost[h]) * self.schedule.leader_purchase(h))
            .sum()
    }

    /// Realized (billing, inconvenience) of the follower.
    pub fn follower_costs(&self, instance: &Instance) -> (f64, f64) {
        let pbar = &instance.prices.competitor;
        let billing = (0..instance.horizon)
            .map(|h| {
                self.frozen_prices[h] * self.schedule.leader_purchase(h) + pbar[h] * self.schedule.competitor_purchase(h)
            })
            .sum();
        let inconvenience = instance
            .devices
            .iter()
            .zip(&self.schedule.devices)
            .map(|(d, s)| d.inconvenience.iter().enumerate().map(|(k, c)| c * s.consumption(k)).sum::<f64>())
            .sum();
        (billing, inconvenience)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Per-iteration CSV log.
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "status", "gap", "runtime_s", "leader_obj", "follower_obj", "realized_base"])?;
        for it in &self.log {
            w.write_record([
                it.t.to_string(),
                it.status.clone(),
                it.gap.to_string(),
                it.runtime_s.to_string(),
                it.leader_obj.to_string(),
                it.follower_obj.to_string(),
                it.realized_base.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a forced path: one base index per line, optional `base` header.
pub fn read_path_csv(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("").trim();
        if field.is_empty() || field.parse::<usize>().is_err() && out.is_empty() {
            continue;
        }
        out.push(field.parse().map_err(|_| CoreError::Config(format!("bad base index '{field}'")))?);
    }
    Ok(out)
}

pub fn write_path_csv(path: &Path, bases: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["base"])?;
    for b in bases {
        w.write_record([b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Last slot of the window starting at `t`.
pub fn window_end(instance: &Instance, cfg: &RhConfig, t: usize) -> usize {
    (t + cfg.l_rh).min(instance.horizon - 1)
}

/// Start slots of all iterations.
pub fn iteration_starts(instance: &Instance, cfg: &RhConfig) -> Vec<usize> {
    let mut out = vec![0];
    let mut t = 0;
    while window_end(instance, cfg, t) < instance.horizon - 1 {
        t += cfg.s_rh;
        out.push(t);
    }
    out
}

/// Mapping from subinstance devices back to the full instance.
#[derive(Debug, Clone)]
pub struct Subinstance {
    pub instance: Instance,
    pub t: usize,
    pub device_map: Vec<usize>,
    /// Devices whose residual demand was clamped to the window's capacity.
    pub clamped: Vec<usize>,
}

/// The window problem at `t` given what has been committed so far.
pub fn make_subinstance(
    instance: &Instance,
    cfg: &RhConfig,
    t: usize,
    prior: &RhTrajectory,
    previous_base: Option<usize>,
) -> Result<Subinstance> {
    let end = window_end(instance, cfg, t);
    let mut devices = Vec::new();
    let mut device_map = Vec::new();
    let mut clamped = Vec::new();
    for (i, dev) in instance.devices.iter().enumerate() {
        let w = dev.window;
        if w.last < t || w.first > end {
            continue;
        }
        let consumed: f64 = (w.first..t).map(|h| prior.schedule.devices[i].consumption(h - w.first)).sum();
        let target = if w.last > end {
            dev.energy_demand.min((t + cfg.l_rh).saturating_sub(w.first) as f64 * dev.max_power)
        } else {
            dev.energy_demand
        };
        let mut e = target - consumed;
        let (first, last) = (w.first.max(t), w.last.min(end));
        let capacity = (last + 1 - first) as f64 * dev.max_power;
        if e < 0.0 {
            if e < -TOL {
                log::warn!("device {i}: negative residual demand {e} at t = {t}; clamped to 0");
            }
            e = 0.0;
        }
        if e > capacity {
            log::warn!("device {i}: residual demand {e} exceeds window capacity {capacity} at t = {t}; clamped");
            clamped.push(i);
            e = capacity;
        }
        if e <= TOL {
            continue;
        }
        devices.push(Device {
            client_id: dev.client_id,
            appliance_id: dev.appliance_id,
            window: TimeWindow::new(first - t, last - t),
            energy_demand: e,
            max_power: dev.max_power,
            inconvenience: dev.inconvenience[first - w.first..=last - w.first].to_vec(),
        });
        device_map.push(i);
    }
    let b = &instance.battery;
    let mut battery = b.clone();
    battery.initial = prior.schedule.state[t].clamp(b.min_level, b.max_level);
    let slice = |v: &[f64]| v[t..=end].to_vec();
    let bases: Vec<Vec<f64>> = instance.tree.bases.iter().map(|b| slice(&b.dg_bound)).collect();
    let rule = ProbRule::Markov {
        stay: cfg.selector.stay_prob,
        switch: cfg.selector.switch_prob,
        previous: previous_base,
    };
    let tree = ScenarioTree::base_only(bases, rule)?;
    let sub = Instance {
        horizon: end + 1 - t,
        slot_minutes: instance.slot_minutes,
        devices,
        battery,
        prices: PriceData { competitor: slice(&instance.prices.competitor), supply_cost: slice(&instance.prices.supply_cost) },
        tree,
    };
    Ok(Subinstance { instance: sub, t, device_map, clamped })
}

fn empty_trajectory(instance: &Instance) -> RhTrajectory {
    let t = instance.horizon;
    let devices = instance
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
    state[0] = instance.battery.initial;
    RhTrajectory {
        realized_bases: Vec::new(),
        frozen_prices: vec![f64::NAN; t],
        realized_dg: vec![0.0; t],
        schedule: ScenarioSchedule {
            devices,
            store_leader: vec![0.0; t],
            store_competitor: vec![0.0; t],
            store_dg: vec![0.0; t],
            state,
        },
        log: Vec::new(),
        complete: false,
        diagnostic: None,
    }
}

/// Run the loop. With `forced` the realized bases are replayed from it,
/// otherwise they are drawn from the configured Markov selector.
pub fn run(
    instance: &Instance,
    cfg: &RhConfig,
    forced: Option<&[usize]>,
    backends: &BackendRegistry,
) -> Result<RhTrajectory> {
    cfg.check()?;
    crate::model::ensure_valid(instance)?;
    let n_bases = instance.tree.bases.len();
    cfg.selector.check(n_bases)?;
    let starts = iteration_starts(instance, cfg);
    if let Some(path) = forced {
        if path.len() < starts.len() {
            return Err(CoreError::Config(format!("forced path has {} entries, need {}", path.len(), starts.len())));
        }
        if let Some(b) = path.iter().find(|&&b| b >= n_bases) {
            return Err(CoreError::Config(format!("forced base {b} out of range")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut traj = empty_trajectory(instance);
    let mut written = vec![false; instance.horizon];
    let mut previous = None;

    for (iter, &t) in starts.iter().enumerate() {
        let end = window_end(instance, cfg, t);
        let last_iter = iter + 1 == starts.len();
        let sub = make_subinstance(instance, cfg, t, &traj, previous)?;
        let mut opts = cfg.options(1.0);
        if t > 0 {
            for h in t..=(t + cfg.l_fh).min(end) {
                debug_assert!(written[h], "slot {h} pinned before it was committed");
                opts.pinned.insert(h - t, traj.frozen_prices[h]);
            }
        }
        let solved = match solve_bilevel(&sub.instance, &opts, backends) {
            Err(CoreError::NoSolution) => {
                log::warn!("iteration t = {t}: no solution in time; retrying with twice the limit");
                let mut longer = cfg.options(2.0);
                longer.pinned = opts.pinned.clone();
                solve_bilevel(&sub.instance, &longer, backends)
            }
            other => other,
        };
        let sol = match solved {
            Ok(s) => s,
            Err(e) => {
                traj.diagnostic = Some(format!("iteration t = {t} failed: {e}"));
                return Ok(traj);
            }
        };

        let base = match forced {
            Some(path) => path[iter],
            None => realize_next(&cfg.selector, previous, n_bases, &mut rng),
        };
        previous = Some(base);
        traj.realized_bases.push(base);

        let commit_to = if last_iter { end } else { t + cfg.s_rh - 1 };
        let price_to = if last_iter { end } else { (t + cfg.s_rh + cfg.l_fh).min(end) };
        for h in t..=price_to {
            if !written[h] {
                traj.frozen_prices[h] = sol.prices.leader[h - t];
                written[h] = true;
            }
        }
        let sc = &sol.follower.scenarios[base];
        for h in t..=commit_to {
            let k = h - t;
            traj.realized_dg[h] = instance.tree.bases[base].dg_bound[h];
            traj.schedule.store_leader[h] = sc.store_leader[k];
            traj.schedule.store_competitor[h] = sc.store_competitor[k];
            traj.schedule.store_dg[h] = sc.store_dg[k];
            traj.schedule.state[h + 1] = sc.state[k + 1];
        }
        for (j, &i) in sub.device_map.iter().enumerate() {
            let (src, dst) = (&sc.devices[j], &mut traj.schedule.devices[i]);
            for h in t..=commit_to {
                if h < dst.first || h >= dst.first + dst.leader.len() || h - t < src.first {
                    continue;
                }
                let (a, b) = (h - dst.first, h - t - src.first);
                if b >= src.leader.len() {
                    continue;
                }
                dst.leader[a] = src.leader[b];
                dst.competitor[a] = src.competitor[b];
                dst.dg[a] = src.dg[b];
                dst.discharge[a] = src.discharge[b];
            }
        }
        traj.log.push(IterationLog {
            t,
            window: TimeWindow::new(t, end),
            status: status_name(sol.status).into(),
            gap: sol.mip_gap,
            runtime_s: sol.runtime_s,
            leader_obj: sol.leader_objective,
            follower_obj: sol.follower.objective,
            realized_base: base,
            pinned: opts.pinned.iter().map(|(&k, &v)| (k + t, v)).collect(),
        });
    }
    traj.complete = true;
    Ok(traj)
}

pub fn status_name(s: MilpStatus) -> &'static str {
    match s {
        MilpStatus::Optimal => "optimal",
        MilpStatus::TimeLimit => "time_limit",
        MilpStatus::NodeLimit => "node_limit",
        MilpStatus::Infeasible => "infeasible",
        MilpStatus::Unbounded => "unbounded",
        MilpStatus::NoSolution => "no_solution",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotViolation {
    pub slot: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceShortfall {
    pub device: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    /// Energy bought from the competitor, which an optimistic follower
    /// facing prices no higher than the competitor's never needs.
    pub competitor_purchases: f64,
    pub dg_overuse: Vec<SlotViolation>,
    /// DG available but neither consumed nor stored.
    pub dg_unused: f64,
    pub unmet_demand: Vec<DeviceShortfall>,
    pub power_violations: Vec<SlotViolation>,
    /// Largest residual of the battery balance, bounds and discharge cap.
    pub battery_residual: f64,
}

impl TrajectoryAudit {
    pub fn is_clean(&self, tol: f64) -> bool {
        self.competitor_purchases <= tol
            && self.dg_overuse.is_empty()
            && self.unmet_demand.is_empty()
            && self.power_violations.is_empty()
            && self.battery_residual <= tol
    }
}

/// Check a trajectory against the full-horizon constraints under its
/// realized DG path.
pub fn audit_trajectory(instance: &Instance, traj: &RhTrajectory) -> TrajectoryAudit {
    let s = &traj.schedule;
    let b = &instance.battery;
    let mut competitor = 0.0;
    let mut dg_overuse = Vec::new();
    let mut dg_unused = 0.0;
    let mut power_violations = Vec::new();
    let mut battery: f64 = 0.0;
    for h in 0..instance.horizon {
        competitor += s.competitor_purchase(h);
        let used = s.dg_use(h);
        let excess = used - traj.realized_dg[h];
        if excess > TOL {
            dg_overuse.push(SlotViolation { slot: h, amount: excess });
        } else {
            dg_unused += -excess.min(0.0);
        }
        let charges = s.store_leader[h] + s.store_competitor[h] + s.store_dg[h];
        let balance = s.state[h + 1] - b.discharge_eff * s.state[h] + s.discharge(h) - b.charge_eff * charges;
        battery = battery.max(balance.abs()).max(s.discharge(h) - s.state[h]);
    }
    for &level in &s.state {
        battery = battery.max(b.min_level - level).max(level - b.max_level);
    }
    battery = battery.max((s.state[0] - b.initial).abs());
    let mut unmet = Vec::new();
    for (i, (dev, ds)) in instance.devices.iter().zip(&s.devices).enumerate() {
        let short = dev.energy_demand - ds.total();
        if short > TOL {
            unmet.push(DeviceShortfall { device: i, amount: short });
        }
        for k in 0..ds.leader.len() {
            let over = ds.consumption(k) - dev.max_power;
            if over > TOL {
                power_violations.push(SlotViolation { slot: ds.first + k, amount: over });
            }
        }
    }
    TrajectoryAudit {
        competitor_purchases: competitor,
        dg_overuse,
        dg_unused,
        unmet_demand: unmet,
        power_violations,
        battery_residual: battery,
    }
}
