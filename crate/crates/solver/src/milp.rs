//! Best-bound branch-and-bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::lp::{LinearProgram, LpStatus, ObjectiveSense};
use crate::propagate::Propagator;
use crate::simplex::{solve_bounded, Basis};
use crate::tolerances::Tolerances;

/// A linear program plus a set of columns restricted to {0, 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub lp: LinearProgram,
    pub binaries: Vec<usize>,
}

impl MilpModel {
    pub fn new(lp: LinearProgram) -> Self {
        Self { lp, binaries: Vec::new() }
    }

    /// Add a binary column with the given objective coefficient.
    pub fn add_binary(&mut self, name: Option<String>, cost: f64) -> usize {
        let j = match name {
            Some(n) => self.lp.add_named_col(n, 0.0, 1.0, cost),
            None => self.lp.add_col(0.0, 1.0, cost),
        };
        self.binaries.push(j);
        j
    }

    pub fn check(&self) -> Result<(), SolverError> {
        self.lp.check()?;
        for &j in &self.binaries {
            if j >= self.lp.num_cols() {
                return Err(SolverError::InvalidModel(format!("binary index {j} out of range")));
            }
            if self.lp.lower[j] < 0.0 || self.lp.upper[j] > 1.0 {
                return Err(SolverError::InvalidModel(format!(
                    "binary column {j} has bounds [{}, {}]",
                    self.lp.lower[j], self.lp.upper[j]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BranchingRule {
    /// Binary closest to 0.5, ties by lowest index.
    #[default]
    MostFractional,
    /// Lowest-index fractional binary.
    FirstFractional,
    /// Uniformly random fractional binary drawn from the seeded generator.
    Random,
    /// Product of estimated down and up bound gains, learned from earlier
    /// branchings; most-fractional until anything has been learned.
    PseudoCost,
}

/// Problem-specific primal heuristic. Receives a node's LP point and may
/// return a full-length point; only its binary values are used, the
/// continuous part is re-optimized with those binaries fixed.
#[derive(Clone)]
pub struct Heuristic(pub Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>);

impl fmt::Debug for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Heuristic")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    pub time_limit: Duration,
    pub rel_gap_target: f64,
    pub node_limit: usize,
    pub branching_rule: BranchingRule,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Start point; its binaries are fixed and the rest re-optimized.
    #[serde(default)]
    pub initial_solution: Option<Vec<f64>>,
    #[serde(skip)]
    pub heuristic: Option<Heuristic>,
    /// Run the heuristic at the first this many nodes, then every
    /// `heuristic_period`-th node.
    #[serde(default = "default_heuristic_nodes")]
    pub heuristic_nodes: usize,
    #[serde(default = "default_heuristic_period")]
    pub heuristic_period: usize,
}

fn default_heuristic_nodes() -> usize {
    32
}

fn default_heuristic_period() -> usize {
    16
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: Duration::from_secs(600),
            rel_gap_target: Tolerances::DEFAULT.mip_gap,
            node_limit: usize::MAX,
            branching_rule: BranchingRule::MostFractional,
            seed: 0,
            tolerances: Tolerances::DEFAULT,
            initial_solution: None,
            heuristic: None,
            heuristic_nodes: default_heuristic_nodes(),
            heuristic_period: default_heuristic_period(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    /// Gap target reached (or tree exhausted).
    Optimal,
    /// Time limit reached with an incumbent.
    TimeLimit,
    /// Node limit reached with an incumbent.
    NodeLimit,
    /// A limit was reached before any incumbent was found.
    NoSolution,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub x: Option<Vec<f64>>,
    pub objective: Option<f64>,
    /// Proven bound on the optimum in the model's own sense.
    pub bound: f64,
    pub rel_gap: f64,
    pub nodes: usize,
    pub runtime: Duration,
    /// Node id and objective of each improving incumbent, in order.
    pub incumbent_trail: Vec<(usize, f64)>,
}

impl MilpSolution {
    pub fn has_solution(&self) -> bool {
        self.x.is_some()
    }
}

/// `|incumbent - bound| / max(1, |incumbent|)`.
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() || !bound.is_finite() {
        return f64::INFINITY;
    }
    (incumbent - bound).abs() / incumbent.abs().max(1.0)
}

#[derive(Debug, Clone)]
struct Node {
    id: usize,
    depth: usize,
    /// Internal (minimization) LP bound inherited from the parent.
    bound: f64,
    fixings: Vec<(usize, bool)>,
    /// Optimal basis of the parent's relaxation.
    warm: Option<Arc<Basis>>,
    /// Branching that created this node: variable, distance moved, up.
    branched: Option<(usize, f64, bool)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: "greater" means explored first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

enum NodeLp {
    Unbounded,
    Optimal { z: f64, x: Vec<f64>, rc: Vec<f64>, basis: Option<Arc<Basis>> },
}

enum NodeOutcome {
    Pruned,
    Unbounded,
    Solved {
        z: f64,
        x: Vec<f64>,
        branch: Option<usize>,
        rounded: Option<Vec<f64>>,
        basis: Option<Arc<Basis>>,
        /// Binaries fixed by reduced cost for the whole subtree.
        implied: Vec<(usize, bool)>,
    },
}

struct Search<'a> {
    model: &'a MilpModel,
    opts: &'a SolveOptions,
    sign: f64,
    prop: Propagator<'a>,
    cols: Vec<Vec<(usize, f64)>>,
    rng: ChaCha8Rng,
    /// Internal objective a node must beat to be worth exploring.
    cutoff: f64,
    /// Per column: (down gain sum, down count, up gain sum, up count).
    pseudo: Vec<(f64, usize, f64, usize)>,
}

/// Solve `model` by best-bound branch-and-bound with the bundled simplex.
pub fn solve_milp(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution, SolverError> {
    model.check()?;
    if opts.time_limit.is_zero() {
        return Err(SolverError::InvalidModel("time limit must be positive".into()));
    }
    let start = Instant::now();
    let sign = match model.lp.sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    let mut search = Search {
        model,
        opts,
        sign,
        prop: Propagator::new(&model.lp, &model.binaries),
        cols: model.lp.columns(),
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        cutoff: f64::INFINITY,
        pseudo: vec![(0.0, 0, 0.0, 0); model.lp.num_cols()],
    };

    let mut heap = BinaryHeap::new();
    heap.push(Node { id: 0, depth: 0, bound: f64::NEG_INFINITY, fixings: Vec::new(), warm: None, branched: None });
    let mut next_id = 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut trail = Vec::new();
    let mut nodes = 0;
    // Smallest bound among nodes discarded only because of the gap target.
    let mut pruned_bound = f64::INFINITY;
    let mut limit_status = None;

    let gap_abs = |inc: f64| opts.rel_gap_target * inc.abs().max(1.0);

    if let Some(start_point) = &opts.initial_solution {
        if start_point.len() != model.lp.num_cols() {
            return Err(SolverError::InvalidModel(format!(
                "start point has {} values for {} columns",
                start_point.len(),
                model.lp.num_cols()
            )));
        }
        if let Some(x) = search.polish(start_point, None)? {
            let val = sign * model.lp.evaluate(&x);
            trace!("start point accepted with objective {}", sign * val);
            trail.push((0, sign * val));
            incumbent = Some((val, x));
        }
    }

    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc - gap_abs(*inc) {
                pruned_bound = pruned_bound.min(node.bound);
                continue;
            }
        }
        if start.elapsed() >= opts.time_limit {
            limit_status = Some(MilpStatus::TimeLimit);
            heap.push(node);
            break;
        }
        if nodes >= opts.node_limit {
            limit_status = Some(MilpStatus::NodeLimit);
            heap.push(node);
            break;
        }
        nodes += 1;
        search.cutoff = incumbent.as_ref().map_or(f64::INFINITY, |(inc, _)| inc - gap_abs(*inc));
        match search.process(&node)? {
            NodeOutcome::Pruned => {}
            NodeOutcome::Unbounded => {
                return Ok(MilpSolution {
                    status: MilpStatus::Unbounded,
                    x: None,
                    objective: None,
                    bound: -sign * f64::INFINITY,
                    rel_gap: f64::INFINITY,
                    nodes,
                    runtime: start.elapsed(),
                    incumbent_trail: trail,
                });
            }
            NodeOutcome::Solved { z, x, branch, rounded, basis, implied } => {
                let xj = branch.map_or(0.0, |j| x[j]);
                let candidate = match branch {
                    None => Some(x),
                    Some(_) => rounded,
                };
                if let Some(cand) = candidate {
                    let val = sign * model.lp.evaluate(&cand);
                    if incumbent.as_ref().is_none_or(|(inc, _)| val < *inc - 1e-12 * inc.abs().max(1.0)) {
                        trace!("node {}: new incumbent {}", node.id, sign * val);
                        trail.push((node.id, sign * val));
                        incumbent = Some((val, cand));
                    }
                }
                let Some(j) = branch else { continue };
                let inc_val = incumbent.as_ref().map(|(v, _)| *v);
                if inc_val.is_some_and(|v| z >= v - gap_abs(v)) {
                    pruned_bound = pruned_bound.min(z);
                    continue;
                }
                let mut base = node.fixings.clone();
                base.extend(implied);
                for value in [false, true] {
                    let mut fixings = base.clone();
                    fixings.push((j, value));
                    let moved = if value { 1.0 - xj } else { xj };
                    heap.push(Node {
                        id: next_id,
                        depth: node.depth + 1,
                        bound: z,
                        fixings,
                        warm: basis.clone(),
                        branched: Some((j, moved, value)),
                    });
                    next_id += 1;
                }
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let runtime = start.elapsed();
    let (status, x, objective, bound) = match incumbent {
        Some((val, x)) => {
            let bound = open_bound.min(pruned_bound).min(val);
            let status = match limit_status {
                Some(s) if relative_gap(val, bound) > opts.rel_gap_target => s,
                _ => MilpStatus::Optimal,
            };
            (status, Some(x), Some(sign * val), sign * bound)
        }
        None => match limit_status {
            Some(_) => (MilpStatus::NoSolution, None, None, sign * open_bound),
            None => (MilpStatus::Infeasible, None, None, sign * f64::INFINITY),
        },
    };
    let rel_gap = objective.map_or(f64::INFINITY, |o| relative_gap(o, bound));
    debug!("branch-and-bound: {status:?} after {nodes} nodes, objective {objective:?}, bound {bound}, gap {rel_gap:.3e}");
    Ok(MilpSolution { status, x, objective, bound, rel_gap, nodes, runtime, incumbent_trail: trail })
}

impl Search<'_> {
    /// Solve the LP relaxation under the given bounds after propagation,
    /// warm-started from `warm` when given. `Ok(None)` means infeasible.
    fn solve_bounds(
        &self,
        lower: &mut [f64],
        upper: &mut [f64],
        dirty: Option<&[usize]>,
        warm: Option<&Basis>,
    ) -> Result<Option<NodeLp>, SolverError> {
        let lp = &self.model.lp;
        if !self.prop.propagate(lower, upper, dirty.unwrap_or(&[])) {
            return Ok(None);
        }
        let (sol, basis) = solve_bounded(lp, &self.cols, lower, upper, &self.opts.tolerances, warm)?;
        match sol.status {
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Ok(Some(NodeLp::Unbounded)),
            LpStatus::Optimal => {
                let rc = sol.reduced_costs.iter().map(|d| self.sign * d).collect();
                Ok(Some(NodeLp::Optimal { z: self.sign * sol.objective, x: sol.x, rc, basis: basis.map(Arc::new) }))
            }
        }
    }

    /// Fix every binary at its value in `y` and re-optimize the continuous part.
    fn polish(&self, y: &[f64], warm: Option<&Basis>) -> Result<Option<Vec<f64>>, SolverError> {
        let lp = &self.model.lp;
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        for &j in &self.model.binaries {
            lower[j] = y[j].round();
            upper[j] = y[j].round();
        }
        match self.solve_bounds(&mut lower, &mut upper, Some(&self.model.binaries), warm)? {
            Some(NodeLp::Optimal { x, .. }) if lp.max_violation(&x) <= self.opts.tolerances.feasibility => Ok(Some(x)),
            _ => Ok(None),
        }
    }

    fn process(&mut self, node: &Node) -> Result<NodeOutcome, SolverError> {
        let lp = &self.model.lp;
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        let mut dirty = Vec::with_capacity(node.fixings.len());
        for &(j, v) in &node.fixings {
            let val = if v { 1.0 } else { 0.0 };
            lower[j] = val;
            upper[j] = val;
            dirty.push(j);
        }
        let dirty = if node.id == 0 { None } else { Some(dirty.as_slice()) };
        let (z, mut x, rc, basis) = match self.solve_bounds(&mut lower, &mut upper, dirty, node.warm.as_deref())? {
            None => return Ok(NodeOutcome::Pruned),
            Some(NodeLp::Unbounded) => return Ok(NodeOutcome::Unbounded),
            Some(NodeLp::Optimal { z, x, rc, basis }) => (z, x, rc, basis),
        };
        let warm = basis.as_deref();
        if let Some((j, moved, up)) = node.branched {
            if moved > 1e-6 && node.bound.is_finite() {
                let gain = (z - node.bound).max(0.0) / moved;
                let p = &mut self.pseudo[j];
                if up {
                    p.2 += gain;
                    p.3 += 1;
                } else {
                    p.0 += gain;
                    p.1 += 1;
                }
            }
        }
        // A nonbasic binary whose reduced cost alone would push the bound
        // past the cutoff keeps its value in the whole subtree.
        let mut implied = Vec::new();
        if self.cutoff.is_finite() {
            for &j in &self.model.binaries {
                if lower[j] == upper[j] {
                    continue;
                }
                let d = rc[j];
                if x[j] <= lower[j] && z + d >= self.cutoff {
                    implied.push((j, false));
                } else if x[j] >= upper[j] && z - d >= self.cutoff {
                    implied.push((j, true));
                }
            }
        }

        let int_tol = self.opts.tolerances.integrality;
        let feas_tol = self.opts.tolerances.feasibility;
        let fractional: Vec<usize> = self
            .model
            .binaries
            .iter()
            .copied()
            .filter(|&j| (x[j] - x[j].round()).abs() > int_tol)
            .collect();
        if fractional.is_empty() {
            let deviation: Vec<(usize, f64)> = self
                .model
                .binaries
                .iter()
                .map(|&j| (j, (x[j] - x[j].round()).abs()))
                .filter(|&(_, d)| d > 0.0)
                .collect();
            for &j in &self.model.binaries {
                x[j] = x[j].round();
            }
            if lp.max_violation(&x) <= feas_tol {
                return Ok(NodeOutcome::Solved { z, x, branch: None, rounded: None, basis, implied: Vec::new() });
            }
            if let Some(p) = self.polish(&x, warm)? {
                return Ok(NodeOutcome::Solved { z, x: p, branch: None, rounded: None, basis, implied: Vec::new() });
            }
            let Some(&(j, _)) = deviation.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))) else {
                return Err(SolverError::NumericalBreakdown {
                    iterations: 0,
                    detail: format!("node {}: integral LP point violates rows beyond tolerance", node.id),
                });
            };
            return Ok(NodeOutcome::Solved { z, x, branch: Some(j), rounded: None, basis, implied });
        }

        let (rounded, stuck) = self.round(&x, &fractional);
        let mut rounded = match rounded {
            Some(r) => self.polish(&r, warm)?.or(Some(r)),
            None => None,
        };
        if let Some(h) = self.heuristic_point(node, &x, warm)? {
            let better = rounded.as_ref().is_none_or(|r| self.sign * lp.evaluate(&h) < self.sign * lp.evaluate(r));
            if better {
                rounded = Some(h);
            }
        }
        if let Some(r) = &rounded {
            let val = self.sign * lp.evaluate(r);
            if val <= z + 1e-9 * z.abs().max(1.0) {
                return Ok(NodeOutcome::Solved { z, x: r.clone(), branch: None, rounded: None, basis, implied: Vec::new() });
            }
        }
        let candidates = if stuck.is_empty() { &fractional } else { &stuck };
        let j = self.pick(&x, candidates);
        Ok(NodeOutcome::Solved { z, x, branch: Some(j), rounded, basis, implied })
    }

    fn heuristic_point(&self, node: &Node, x: &[f64], warm: Option<&Basis>) -> Result<Option<Vec<f64>>, SolverError> {
        let Some(h) = &self.opts.heuristic else { return Ok(None) };
        let period = self.opts.heuristic_period.max(1);
        if node.id >= self.opts.heuristic_nodes && node.id % period != 0 {
            return Ok(None);
        }
        match (h.0)(x) {
            Some(cand) if cand.len() == x.len() => self.polish(&cand, warm),
            _ => Ok(None),
        }
    }

    /// Round fractional binaries one at a time, keeping every touched row
    /// satisfied. Returns the rounded point when all could be rounded, and
    /// the binaries that could not.
    fn round(&self, x: &[f64], fractional: &[usize]) -> (Option<Vec<f64>>, Vec<usize>) {
        let lp = &self.model.lp;
        let tol = self.opts.tolerances.feasibility;
        let mut y = x.to_vec();
        for &j in &self.model.binaries {
            if (y[j] - y[j].round()).abs() <= self.opts.tolerances.integrality {
                y[j] = y[j].round();
            }
        }
        let mut stuck = Vec::new();
        for &j in fractional {
            let near = y[j].round();
            let mut done = false;
            for v in [near, 1.0 - near] {
                let old = y[j];
                y[j] = v;
                let ok = self.prop.col_rows(j).iter().all(|&i| lp.rows[i].violation(&y) <= tol);
                if ok {
                    done = true;
                    break;
                }
                y[j] = old;
            }
            if !done {
                stuck.push(j);
            }
        }
        if stuck.is_empty() && lp.max_violation(&y) <= tol {
            (Some(y), stuck)
        } else {
            (None, stuck)
        }
    }

    fn pick(&mut self, x: &[f64], candidates: &[usize]) -> usize {
        match self.opts.branching_rule {
            BranchingRule::FirstFractional => *candidates.iter().min().unwrap(),
            BranchingRule::Random => candidates[self.rng.random_range(0..candidates.len())],
            BranchingRule::PseudoCost => {
                let (mut sd, mut nd, mut su, mut nu) = (0.0, 0, 0.0, 0);
                for p in &self.pseudo {
                    sd += p.0;
                    nd += p.1;
                    su += p.2;
                    nu += p.3;
                }
                if nd + nu == 0 {
                    return self.most_fractional(x, candidates);
                }
                let avg_d = if nd > 0 { sd / nd as f64 } else { su / nu as f64 };
                let avg_u = if nu > 0 { su / nu as f64 } else { avg_d };
                let mut best = candidates[0];
                let mut best_score = f64::NEG_INFINITY;
                for &j in candidates {
                    let p = self.pseudo[j];
                    let down = if p.1 > 0 { p.0 / p.1 as f64 } else { avg_d };
                    let up = if p.3 > 0 { p.2 / p.3 as f64 } else { avg_u };
                    let score = (down * x[j]).max(1e-9) * (up * (1.0 - x[j])).max(1e-9);
                    if score > best_score * (1.0 + 1e-12) || (score >= best_score * (1.0 - 1e-12) && j < best) {
                        best_score = score;
                        best = j;
                    }
                }
                best
            }
            BranchingRule::MostFractional => self.most_fractional(x, candidates),
        }
    }

    fn most_fractional(&self, x: &[f64], candidates: &[usize]) -> usize {
        let mut best = candidates[0];
        let mut best_score = f64::INFINITY;
        for &j in candidates {
            let score = (x[j] - 0.5).abs();
            if score < best_score - 1e-12 || (score <= best_score + 1e-12 && j < best) {
                best_score = score;
                best = j;
            }
        }
        best
    }
}
