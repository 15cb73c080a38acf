//! Instance data, validation and the synthetic generator.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scenario::ScenarioTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub first: usize,
    pub last: usize,
}

impl TimeWindow {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    pub fn contains(&self, h: usize) -> bool {
        (self.first..=self.last).contains(&h)
    }

    pub fn slots(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub client_id: u32,
    pub appliance_id: u32,
    pub window: TimeWindow,
    pub energy_demand: f64,
    pub max_power: f64,
    /// Cost per unit consumed, one entry per slot of the window.
    pub inconvenience: Vec<f64>,
}

impl Device {
    /// Inconvenience coefficient at absolute slot `h` (inside the window).
    pub fn inconvenience_at(&self, h: usize) -> f64 {
        self.inconvenience[h - self.window.first]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub initial: f64,
    pub min_level: f64,
    pub max_level: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
}

impl Battery {
    /// A battery that can hold nothing.
    pub fn none() -> Self {
        Self { initial: 0.0, min_level: 0.0, max_level: 0.0, charge_eff: 1.0, discharge_eff: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceData {
    #[serde(rename = "competitor_prices")]
    pub competitor: Vec<f64>,
    #[serde(rename = "supply_costs")]
    pub supply_cost: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Number of slots, `H + 1`.
    pub horizon: usize,
    pub slot_minutes: u32,
    pub devices: Vec<Device>,
    pub battery: Battery,
    #[serde(flatten)]
    pub prices: PriceData,
    #[serde(rename = "scenario_tree")]
    pub tree: ScenarioTree,
}

impl Instance {
    pub fn total_demand(&self) -> f64 {
        self.devices.iter().map(|d| d.energy_demand).sum()
    }

    /// Same instance with the tree replaced.
    pub fn with_tree(&self, tree: ScenarioTree) -> Self {
        Self { tree, ..self.clone() }
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Leader prices, one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceProfile {
    pub leader: Vec<f64>,
}

impl PriceProfile {
    pub fn competitor(instance: &Instance) -> Self {
        Self { leader: instance.prices.competitor.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Dimension,
    Window,
    Demand,
    Power,
    Inconvenience,
    Battery,
    Price,
    Scenario,
    /// The device cannot receive its demand inside its window.
    Unsatisfiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

fn finite_nonneg(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x >= 0.0)
}

pub fn validate(instance: &Instance) -> ValidationReport {
    use ViolationKind::*;
    let mut r = ValidationReport::default();
    let t = instance.horizon;
    if t == 0 {
        r.push(Dimension, "horizon has no slots".into());
        return r;
    }
    let (pbar, k) = (&instance.prices.competitor, &instance.prices.supply_cost);
    if pbar.len() != t || k.len() != t {
        r.push(Dimension, format!("price vectors have {} and {} entries, expected {t}", pbar.len(), k.len()));
    } else {
        for h in 0..t {
            if !(pbar[h].is_finite() && pbar[h] > 0.0) {
                r.push(Price, format!("competitor price at slot {h} must be positive"));
            }
            if !(k[h].is_finite() && k[h] >= 0.0) {
                r.push(Price, format!("supply cost at slot {h} must be nonnegative"));
            }
            if pbar[h] <= k[h] {
                r.push(Price, format!("competitor price {} not above supply cost {} at slot {h}", pbar[h], k[h]));
            }
        }
    }

    for (i, d) in instance.devices.iter().enumerate() {
        let w = d.window;
        if w.is_empty() || w.last >= t {
            r.push(Window, format!("device {i}: window {}..{} outside 0..{}", w.first, w.last, t - 1));
            continue;
        }
        if !(d.energy_demand.is_finite() && d.energy_demand > 0.0) {
            r.push(Demand, format!("device {i}: energy demand must be positive"));
        }
        if !(d.max_power.is_finite() && d.max_power > 0.0) {
            r.push(Power, format!("device {i}: max power must be positive"));
        }
        if d.inconvenience.len() != w.len() {
            r.push(Inconvenience, format!("device {i}: {} inconvenience entries for {} slots", d.inconvenience.len(), w.len()));
        } else if !finite_nonneg(&d.inconvenience) {
            r.push(Inconvenience, format!("device {i}: negative inconvenience"));
        } else if d.inconvenience.windows(2).any(|p| p[1] < p[0]) {
            r.push(Inconvenience, format!("device {i}: inconvenience decreases inside the window"));
        }
        if d.energy_demand > w.len() as f64 * d.max_power * (1.0 + 1e-12) {
            r.push(Unsatisfiable, format!(
                "device {i}: demand unsatisfiable ({} > {} slots x {})",
                d.energy_demand,
                w.len(),
                d.max_power
            ));
        }
    }

    let b = &instance.battery;
    if !finite_nonneg(&[b.initial, b.min_level, b.max_level]) {
        r.push(Battery, "battery levels must be finite and nonnegative".into());
    }
    if b.max_level < b.min_level {
        r.push(Battery, "battery maximum below minimum".into());
    }
    if b.initial < b.min_level {
        r.push(Battery, "initial battery below minimum".into());
    }
    if b.initial > b.max_level {
        r.push(Battery, "initial battery above maximum".into());
    }
    for (name, eff) in [("charge", b.charge_eff), ("discharge", b.discharge_eff)] {
        if !(eff > 0.0 && eff <= 1.0) {
            r.push(Battery, format!("{name} efficiency {eff} outside (0, 1]"));
        }
    }

    let tree = &instance.tree;
    if tree.horizon() != t {
        r.push(Scenario, format!("scenario tree covers {} slots, expected {t}", tree.horizon()));
    }
    let total: f64 = tree.probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        r.push(Scenario, format!("leaf probabilities sum to {total}"));
    }
    r
}

/// Fail with [`CoreError::Validation`] unless the instance is clean.
pub fn ensure_valid(instance: &Instance) -> Result<()> {
    let report = validate(instance);
    if report.is_clean() {
        Ok(())
    } else {
        Err(CoreError::Validation(report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowClass {
    Narrow,
    Base,
    Wide,
}

impl WindowClass {
    /// Range of the window-length factor relative to the slots needed at full power.
    pub fn factor_range(self) -> (f64, f64) {
        match self {
            Self::Narrow => (1.4, 2.0),
            Self::Base => (1.8, 2.5),
            Self::Wide => (2.14, 3.0),
        }
    }
}

/// Knobs of the sensitivity variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub dg_scale: f64,
    pub battery_scale: f64,
    pub inconvenience_slope: f64,
    pub spot_multiplier: f64,
    pub window_class: WindowClass,
}

impl Default for VariantSpec {
    fn default() -> Self {
        Self {
            dg_scale: 1.0,
            battery_scale: 1.0,
            inconvenience_slope: BASE_SLOPE,
            spot_multiplier: 1.0,
            window_class: WindowClass::Base,
        }
    }
}

pub const BASE_SLOPE: f64 = 0.0625;
/// Supply cost above which the spot multiplier applies.
pub const PEAK_THRESHOLD: f64 = 4.5;
pub const COMPETITOR_PRICE: f64 = 7.0;

impl VariantSpec {
    pub fn check(&self) -> Result<()> {
        let scales = [0.0, 0.5, 1.0, 1.5];
        let slopes = [0.0, 0.5 * BASE_SLOPE, BASE_SLOPE, 1.5 * BASE_SLOPE];
        let bad = if !scales.contains(&self.dg_scale) {
            Some(format!("DG scale {} not in {{0, 0.5, 1, 1.5}}", self.dg_scale))
        } else if !scales.contains(&self.battery_scale) {
            Some(format!("battery scale {} not in {{0, 0.5, 1, 1.5}}", self.battery_scale))
        } else if !slopes.contains(&self.inconvenience_slope) {
            Some(format!("inconvenience slope {} not in {slopes:?}", self.inconvenience_slope))
        } else if ![1.0, 1.2].contains(&self.spot_multiplier) {
            Some(format!("spot multiplier {} not in {{1.0, 1.2}}", self.spot_multiplier))
        } else {
            None
        };
        bad.map_or(Ok(()), |m| Err(CoreError::Config(m)))
    }
}

/// Size of a generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub slots: usize,
    pub devices: usize,
    pub slot_minutes: u32,
}

impl Preset {
    /// One week of half-hour slots with 120 devices.
    pub fn week() -> Self {
        Self { slots: 336, devices: 120, slot_minutes: 30 }
    }

    /// Desk-scale day: 12 to 48 slots covering 24 hours, 4 to 12 devices.
    pub fn mini(slots: usize, devices: usize) -> Result<Self> {
        if !(12..=48).contains(&slots) || !(4..=12).contains(&devices) {
            return Err(CoreError::Config(format!("mini preset needs 12..=48 slots and 4..=12 devices, got {slots}/{devices}")));
        }
        Ok(Self { slots, devices, slot_minutes: (1440 / slots) as u32 })
    }

    fn hour(&self, h: usize) -> f64 {
        (h as f64 * self.slot_minutes as f64 / 60.0) % 24.0
    }

    fn days(&self) -> usize {
        (self.slots * self.slot_minutes as usize).div_ceil(1440)
    }
}

// Independent streams so that changing one knob never shifts another's draws.
const DEVICE_STREAM: u64 = 0x6465_7669_6365;
const DG_STREAM: u64 = 0x6467;
const PRICE_STREAM: u64 = 0x7072_6963_65;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.rotate_left(17))
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let d = hour - center;
    (-(d / width).powi(2)).exp()
}

/// Spot purchase cost per slot: low at night, peaks in the morning and evening.
pub fn spot_curve(seed: u64, preset: &Preset) -> Vec<f64> {
    let mut rng = stream(seed, PRICE_STREAM);
    let days: Vec<(f64, f64)> = (0..preset.days()).map(|_| (rng.random_range(0.9..1.05), rng.random_range(0.9..1.05))).collect();
    (0..preset.slots)
        .map(|h| {
            let hour = preset.hour(h);
            let (am, pm) = days[h * preset.slot_minutes as usize / 1440];
            let noise: f64 = rng.random_range(-0.1..0.1);
            let k = 3.2 + 1.75 * am * bump(hour, 8.5, 1.6) + 2.1 * pm * bump(hour, 19.0, 2.0)
                - 0.6 * bump(hour, 3.5, 2.5)
                + noise;
            (k * 100.0).round() / 100.0
        })
        .collect()
}

/// Shape of on-site generation: zero at night, a sine arch over daytime with
/// a per-day cloudiness factor. `capacity` is the clear-sky peak.
pub fn dg_curve(seed: u64, preset: &Preset, capacity: f64) -> Vec<f64> {
    let mut rng = stream(seed, DG_STREAM);
    let cloud: Vec<f64> = (0..preset.days()).map(|_| rng.random_range(0.6..1.0)).collect();
    (0..preset.slots)
        .map(|h| {
            let hour = preset.hour(h);
            let jitter: f64 = rng.random_range(0.95..1.05);
            if !(7.0..19.0).contains(&hour) {
                return 0.0;
            }
            let day = cloud[h * preset.slot_minutes as usize / 1440];
            let v = capacity * day * jitter * (PI * (hour - 7.0) / 12.0).sin();
            (v * 100.0).round() / 100.0
        })
        .collect()
}

/// Devices with raw draws kept separate from the window factor, so the
/// window class only rescales lengths.
struct DeviceDraw {
    day: usize,
    start_hour: f64,
    energy: f64,
    power_per_half_hour: f64,
    window_u: f64,
}

fn device_draws(seed: u64, preset: &Preset) -> Vec<DeviceDraw> {
    let mut rng = stream(seed, DEVICE_STREAM);
    let days = preset.days();
    (0..preset.devices)
        .map(|_| {
            let day = rng.random_range(0..days);
            let morning = rng.random_bool(0.45);
            let center = if morning { 7.0 } else { 17.5 };
            let start_hour = center + rng.random_range(-1.5..1.5);
            DeviceDraw {
                day,
                start_hour,
                energy: (rng.random_range(25.0f64..50.0) * 10.0).round() / 10.0,
                power_per_half_hour: (rng.random_range(3.0f64..6.0) * 10.0).round() / 10.0,
                window_u: rng.random(),
            }
        })
        .collect()
}

/// Generate a seeded instance of the given size with a single scenario whose
/// DG bound is the scaled base DG curve.
pub fn generate_instance(seed: u64, preset: &Preset, variants: &VariantSpec) -> Result<Instance> {
    variants.check()?;
    let t = preset.slots;
    let slot_scale = preset.slot_minutes as f64 / 30.0;
    let (lo, hi) = variants.window_class.factor_range();
    let slots_per_day = 1440 / preset.slot_minutes as usize;

    let mut devices = Vec::with_capacity(preset.devices);
    for (i, d) in device_draws(seed, preset).into_iter().enumerate() {
        let beta = d.power_per_half_hour * slot_scale;
        let needed = (d.energy / beta).ceil().max(1.0);
        let len = ((needed * (lo + d.window_u * (hi - lo))).ceil() as usize).clamp(1, t);
        let raw_first = d.day * slots_per_day + (d.start_hour * 60.0 / preset.slot_minutes as f64).floor() as usize;
        let first = raw_first.min(t - len);
        let window = TimeWindow::new(first, first + len - 1);
        let inconvenience = (0..len).map(|k| variants.inconvenience_slope * k as f64).collect();
        devices.push(Device {
            client_id: (i / 2) as u32,
            appliance_id: (i % 2) as u32,
            window,
            energy_demand: d.energy,
            max_power: beta,
            inconvenience,
        });
    }

    let total: f64 = devices.iter().map(|d| d.energy_demand).sum();
    let hours = t as f64 * preset.slot_minutes as f64 / 60.0;
    // Average demand per slot sets both the DG peak and the battery size.
    let per_slot = total / t as f64;
    let dg = dg_curve(seed, preset, 1.6 * per_slot);
    let battery = Battery {
        initial: 0.0,
        min_level: 0.0,
        max_level: ((2.0 * total / hours * variants.battery_scale) * 100.0).round() / 100.0,
        charge_eff: 0.95,
        discharge_eff: 0.95,
    };
    let supply_cost = spot_curve(seed, preset)
        .into_iter()
        .map(|k| if k > PEAK_THRESHOLD { k * variants.spot_multiplier } else { k })
        .collect();
    let tree = ScenarioTree::single(dg.iter().map(|v| v * variants.dg_scale).collect())?;
    Ok(Instance {
        horizon: t,
        slot_minutes: preset.slot_minutes,
        devices,
        battery,
        prices: PriceData { competitor: vec![COMPETITOR_PRICE; t], supply_cost },
        tree,
    })
}

pub fn generate_week_instance(seed: u64, variants: &VariantSpec) -> Result<Instance> {
    generate_instance(seed, &Preset::week(), variants)
}

/// The unscaled DG curve that [`generate_instance`] scales by the variant.
pub fn base_dg_curve(seed: u64, preset: &Preset) -> Vec<f64> {
    let inst = generate_instance(seed, preset, &VariantSpec::default()).expect("default variant is valid");
    inst.tree.leaves[0].dg_bound.clone()
}

/// Scale factors of the DG curve used as base scenarios for stochastic runs.
pub const STOCHASTIC_DG_SCALES: [f64; 3] = [0.5, 1.0, 1.5];

/// The instance with its single DG curve replaced by one base scenario per
/// scale factor, one leaf each.
pub fn with_scaled_bases(instance: &Instance, scales: &[f64], rule: crate::scenario::ProbRule) -> Result<Instance> {
    let dg = &instance.tree.bases[0].dg_bound;
    let bases = scales.iter().map(|s| dg.iter().map(|v| v * s).collect()).collect();
    Ok(instance.with_tree(ScenarioTree::base_only(bases, rule)?))
}

/// Write a `slot,value` series.
pub fn write_series_csv(path: &std::path::Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slot", "value"])?;
    for (h, v) in values.iter().enumerate() {
        w.write_record([h.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Demand if every device ran at full power from the start of its window.
pub fn unshifted_demand(instance: &Instance) -> Vec<f64> {
    let mut out = vec![0.0; instance.horizon];
    for d in &instance.devices {
        let mut left = d.energy_demand;
        for h in d.window.slots() {
            let q = left.min(d.max_power);
            out[h] += q;
            left -= q;
        }
    }
    out
}
