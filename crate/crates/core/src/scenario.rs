//! Scenario trees over DG availability.
//!
//! A tree is built from a handful of base DG profiles. Every stage of
//! `period_length` slots picks one base for that stretch, so a leaf is a
//! concatenation of base segments. Leaves are stored in lexicographic order of
//! their stage choices.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Refuse to enumerate trees larger than this.
pub const MAX_LEAVES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseScenario {
    pub id: usize,
    pub dg_bound: Vec<f64>,
}

/// How leaf probabilities are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbRule {
    Uniform,
    /// Product of Markov transitions along the stage choices. The first stage
    /// is conditioned on `previous` when given, otherwise uniform.
    Markov {
        stay: f64,
        switch: f64,
        #[serde(default)]
        previous: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    pub stage_choices: Vec<usize>,
    pub dg_bound: Vec<f64>,
}

/// Markov process over base indices used to pick realized scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovSelector {
    pub stay_prob: f64,
    pub switch_prob: f64,
}

impl Default for MarkovSelector {
    fn default() -> Self {
        Self { stay_prob: 0.4, switch_prob: 0.3 }
    }
}

impl MarkovSelector {
    pub fn check(&self, n_bases: usize) -> Result<()> {
        let total = self.stay_prob + (n_bases as f64 - 1.0) * self.switch_prob;
        let ok = (0.0..=1.0).contains(&self.stay_prob)
            && (0.0..=1.0).contains(&self.switch_prob)
            && (n_bases == 1 || (total - 1.0).abs() <= 1e-9);
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!(
                "selector stay {} switch {} does not sum to 1 over {n_bases} bases",
                self.stay_prob, self.switch_prob
            )))
        }
    }

    /// Transition probability from `from` (or from nothing, uniform) to `to`.
    pub fn transition(&self, from: Option<usize>, to: usize, n_bases: usize) -> f64 {
        match from {
            _ if n_bases == 1 => 1.0,
            None => 1.0 / n_bases as f64,
            Some(f) if f == to => self.stay_prob,
            Some(_) => self.switch_prob,
        }
    }
}

/// Draw the next realized base. With no previous base the draw is uniform.
pub fn realize_next<R: Rng + ?Sized>(
    selector: &MarkovSelector,
    previous: Option<usize>,
    n_bases: usize,
    rng: &mut R,
) -> usize {
    assert!(n_bases > 0, "no base scenarios");
    if n_bases == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for k in 0..n_bases {
        acc += selector.transition(previous, k, n_bases);
        if u < acc {
            return k;
        }
    }
    // Rounding left a sliver above the last cumulative value.
    previous.unwrap_or(n_bases - 1)
}

/// Serialized form of a tree: everything else is derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeSpec {
    bases: Vec<Vec<f64>>,
    period_length: usize,
    prob_rule: ProbRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeSpec", into = "TreeSpec")]
pub struct ScenarioTree {
    pub bases: Vec<BaseScenario>,
    pub period_length: usize,
    pub depth: usize,
    pub prob_rule: ProbRule,
    pub leaves: Vec<Scenario>,
    pub probabilities: Vec<f64>,
}

impl TryFrom<TreeSpec> for ScenarioTree {
    type Error = CoreError;

    fn try_from(spec: TreeSpec) -> Result<Self> {
        let horizon = spec.bases.first().map_or(0, Vec::len);
        build_complete_tree(spec.bases, spec.period_length, horizon, spec.prob_rule)
    }
}

impl From<ScenarioTree> for TreeSpec {
    fn from(tree: ScenarioTree) -> Self {
        TreeSpec {
            bases: tree.bases.into_iter().map(|b| b.dg_bound).collect(),
            period_length: tree.period_length,
            prob_rule: tree.prob_rule,
        }
    }
}

pub fn build_complete_tree(
    bases: Vec<Vec<f64>>,
    period_length: usize,
    horizon: usize,
    rule: ProbRule,
) -> Result<ScenarioTree> {
    if bases.is_empty() {
        return Err(CoreError::Scenario("empty base list".into()));
    }
    if period_length == 0 {
        return Err(CoreError::Scenario("period length must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(CoreError::Scenario("empty horizon".into()));
    }
    for (i, b) in bases.iter().enumerate() {
        if b.len() != horizon {
            return Err(CoreError::Scenario(format!("base {i} has {} slots, expected {horizon}", b.len())));
        }
        if b.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::Scenario(format!("base {i} has a negative or non-finite bound")));
        }
    }
    let n = bases.len();
    let selector = match rule {
        ProbRule::Uniform => None,
        ProbRule::Markov { stay, switch, previous } => {
            let sel = MarkovSelector { stay_prob: stay, switch_prob: switch };
            sel.check(n)?;
            if previous.is_some_and(|p| p >= n) {
                return Err(CoreError::Scenario("previous base out of range".into()));
            }
            Some((sel, previous))
        }
    };
    let depth = horizon.div_ceil(period_length);
    let count = (n as f64).powi(depth as i32);
    if count > MAX_LEAVES as f64 {
        return Err(CoreError::Scenario(format!("{n}^{depth} leaves exceeds the limit of {MAX_LEAVES}")));
    }
    let count = count as usize;

    let mut leaves = Vec::with_capacity(count);
    let mut probabilities = Vec::with_capacity(count);
    let mut choices = vec![0usize; depth];
    for id in 0..count {
        let mut rest = id;
        for stage in (0..depth).rev() {
            choices[stage] = rest % n;
            rest /= n;
        }
        let dg_bound = (0..horizon).map(|h| bases[choices[h / period_length]][h]).collect();
        let p = match selector {
            None => 1.0 / count as f64,
            Some((sel, previous)) => {
                let mut prev = previous;
                let mut p = 1.0;
                for &c in &choices {
                    p *= sel.transition(prev, c, n);
                    prev = Some(c);
                }
                p
            }
        };
        leaves.push(Scenario { id, stage_choices: choices.clone(), dg_bound });
        probabilities.push(p);
    }
    Ok(ScenarioTree {
        bases: bases.into_iter().enumerate().map(|(id, dg_bound)| BaseScenario { id, dg_bound }).collect(),
        period_length,
        depth,
        prob_rule: rule,
        leaves,
        probabilities,
    })
}

impl ScenarioTree {
    /// One leaf with probability 1.
    pub fn single(dg_bound: Vec<f64>) -> Result<Self> {
        let horizon = dg_bound.len();
        build_complete_tree(vec![dg_bound], horizon.max(1), horizon, ProbRule::Uniform)
    }

    /// Depth-one tree with one leaf per base.
    pub fn base_only(bases: Vec<Vec<f64>>, rule: ProbRule) -> Result<Self> {
        let horizon = bases.first().map_or(0, Vec::len);
        build_complete_tree(bases, horizon.max(1), horizon, rule)
    }

    pub fn horizon(&self) -> usize {
        self.bases[0].dg_bound.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn base_vectors(&self) -> Vec<Vec<f64>> {
        self.bases.iter().map(|b| b.dg_bound.clone()).collect()
    }
}

/// Longest common prefix of two DG paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indistinguishability {
    /// The paths agree on every slot.
    Identical,
    /// They agree on slots `0..=h` and differ at `h + 1`.
    UpTo(usize),
    /// They differ already at slot 0.
    Never,
}

impl Indistinguishability {
    /// The last shared slot as a signed index (`-1` for [`Self::Never`]);
    /// `horizon - 1` for identical paths.
    pub fn as_slot(self, horizon: usize) -> i64 {
        match self {
            Self::Identical => horizon as i64 - 1,
            Self::UpTo(h) => h as i64,
            Self::Never => -1,
        }
    }
}

pub fn indistinguishability_time(a: &Scenario, b: &Scenario) -> Indistinguishability {
    prefix_agreement(&a.dg_bound, &b.dg_bound)
}

pub fn prefix_agreement(a: &[f64], b: &[f64]) -> Indistinguishability {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        None => Indistinguishability::Identical,
        Some(0) => Indistinguishability::Never,
        Some(k) => Indistinguishability::UpTo(k - 1),
    }
}

/// A nonanticipativity link: leaves `a` and `b` must decide alike on slots
/// `0..=h_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaPair {
    pub a: usize,
    pub b: usize,
    pub h_max: usize,
}

/// Chained nonanticipativity links.
///
/// Leaves are sorted by their DG path. In that order the shared prefix of any
/// two leaves is the minimum over the adjacent links between them, so linking
/// neighbours reproduces every all-pairs equality by transitivity.
pub fn nonanticipativity_pairs(tree: &ScenarioTree) -> Vec<NaPair> {
    let horizon = tree.horizon();
    let mut order: Vec<usize> = (0..tree.leaves.len()).collect();
    order.sort_by(|&i, &j| lex_cmp(&tree.leaves[i].dg_bound, &tree.leaves[j].dg_bound).then(i.cmp(&j)));
    order
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            let h = indistinguishability_time(&tree.leaves[a], &tree.leaves[b]).as_slot(horizon);
            (h >= 0).then_some(NaPair { a, b, h_max: h as usize })
        })
        .collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}
