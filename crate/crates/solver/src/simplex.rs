//! Bounded-variable primal simplex, plus a dual simplex for re-solving
//! from a known basis after bound changes.
//!
//! Rows are brought to equality form with one logical column each
//! (`a·x + s = b`, the bounds of `s` encode the row sense). Rows whose logical
//! cannot start feasible get an artificial column and a phase-one objective.
//! The basis inverse is kept explicitly (dense, column-major) and updated by
//! rank-one eta transformations; it is rebuilt from scratch when the
//! accumulated residual grows.

use log::trace;

use crate::error::SolverError;
use crate::lp::{LinearProgram, LpSolution, LpStatus, ObjectiveSense, Sense};
use crate::tolerances::Tolerances;

/// Solve `lp` with the bundled simplex using default tolerances.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, SolverError> {
    solve_lp_with(lp, &Tolerances::DEFAULT)
}

pub fn solve_lp_with(lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution, SolverError> {
    lp.check()?;
    let cols = lp.columns();
    let mut simplex = Simplex::new(lp, &cols, &lp.lower, &lp.upper, *tol);
    simplex.run()
}

/// A basis: the basic variable of each row (structural `j < n`, logical
/// `n + i`) and which nonbasic variables sit at their upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

/// Solve `lp` with its column bounds replaced by `lower`/`upper`, starting
/// from `warm` when given. `cols` must be `lp`'s column-major matrix. Also
/// returns the final basis when the LP is optimal.
pub(crate) fn solve_bounded(
    lp: &LinearProgram,
    cols: &[Vec<(usize, f64)>],
    lower: &[f64],
    upper: &[f64],
    tol: &Tolerances,
    warm: Option<&Basis>,
) -> Result<(LpSolution, Option<Basis>), SolverError> {
    if let Some(basis) = warm {
        if let Some(mut simplex) = Simplex::from_basis(lp, cols, lower, upper, *tol, basis) {
            match simplex.run_dual() {
                Ok(Some(sol)) => {
                    let b = (sol.status == LpStatus::Optimal).then(|| simplex.export_basis());
                    return Ok((sol, b));
                }
                Ok(None) => trace!("warm start abandoned after {} iterations", simplex.iterations),
                Err(e) => trace!("warm start failed: {e}"),
            }
        }
    }
    let mut simplex = Simplex::new(lp, cols, lower, upper, *tol);
    let sol = simplex.run()?;
    let b = (sol.status == LpStatus::Optimal).then(|| simplex.export_basis());
    Ok((sol, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

const RECOMPUTE_EVERY: usize = 64;
const BLAND_AFTER_DEGENERATE: usize = 40;
const MAX_REFACTORS: usize = 8;

struct Simplex<'a> {
    lp: &'a LinearProgram,
    tol: Tolerances,
    m: usize,
    n: usize,
    cols: &'a [Vec<(usize, f64)>],
    art_row: Vec<usize>,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    /// Column-major `m x m`: entry `(i, k)` lives at `binv[k * m + i]`.
    binv: Vec<f64>,
    y: Vec<f64>,
    rhs: Vec<f64>,
    iterations: usize,
    refactors: usize,
    alpha: Vec<f64>,
}

enum Step {
    Optimal,
    Unbounded,
    Continue,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, cols: &'a [Vec<(usize, f64)>], lower: &[f64], upper: &[f64], tol: Tolerances) -> Self {
        let m = lp.num_rows();
        let n = lp.num_cols();
        let mut lower = lower.to_vec();
        let mut upper = upper.to_vec();
        let mut x = Vec::with_capacity(n + 2 * m);
        let mut state = Vec::with_capacity(n + 2 * m);
        for j in 0..n {
            if lower[j].is_finite() {
                x.push(lower[j]);
                state.push(VarState::AtLower);
            } else {
                x.push(upper[j]);
                state.push(VarState::AtUpper);
            }
        }
        let rhs: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
        let mut resid = rhs.clone();
        for (j, col) in cols.iter().enumerate() {
            if x[j] != 0.0 {
                for &(i, a) in col {
                    resid[i] -= a * x[j];
                }
            }
        }

        let mut basis = vec![0; m];
        let mut binv = vec![0.0; m * m];
        let mut art_row = Vec::new();
        let mut art_sign = Vec::new();
        for (i, row) in lp.rows.iter().enumerate() {
            let (sl, su) = match row.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lower.push(sl);
            upper.push(su);
            let r = resid[i];
            if r >= sl && r <= su && row.sense != Sense::Eq {
                x.push(r);
                state.push(VarState::Basic(i));
                basis[i] = n + i;
                binv[i * m + i] = 1.0;
            } else {
                x.push(0.0);
                state.push(if su == 0.0 && sl < 0.0 { VarState::AtUpper } else { VarState::AtLower });
                art_row.push(i);
                art_sign.push(if r >= 0.0 { 1.0 } else { -1.0 });
            }
        }
        for (k, (&i, &sign)) in art_row.iter().zip(&art_sign).enumerate() {
            lower.push(0.0);
            upper.push(f64::INFINITY);
            x.push(resid[i].abs());
            state.push(VarState::Basic(i));
            basis[i] = n + m + k;
            binv[i * m + i] = sign;
        }
        let total = x.len();
        Self {
            lp,
            tol,
            m,
            n,
            cols,
            art_row,
            art_sign,
            lower,
            upper,
            cost: vec![0.0; total],
            x,
            state,
            basis,
            binv,
            y: vec![0.0; m],
            rhs,
            iterations: 0,
            refactors: 0,
            alpha: vec![0.0; m],
        }
    }

    /// Start from `basis` with no artificials. `None` when the basis does not
    /// fit, is singular, or leaves a nonbasic variable at an infinite bound.
    fn from_basis(
        lp: &'a LinearProgram,
        cols: &'a [Vec<(usize, f64)>],
        lower: &[f64],
        upper: &[f64],
        tol: Tolerances,
        basis: &Basis,
    ) -> Option<Self> {
        let m = lp.num_rows();
        let n = lp.num_cols();
        if basis.basic.len() != m || basis.at_upper.len() != n + m {
            return None;
        }
        let mut lo = lower.to_vec();
        let mut up = upper.to_vec();
        for row in &lp.rows {
            let (sl, su) = match row.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lo.push(sl);
            up.push(su);
        }
        let mut state: Vec<VarState> =
            basis.at_upper.iter().map(|&u| if u { VarState::AtUpper } else { VarState::AtLower }).collect();
        for (i, &b) in basis.basic.iter().enumerate() {
            if b >= n + m || matches!(state[b], VarState::Basic(_)) {
                return None;
            }
            state[b] = VarState::Basic(i);
        }
        let mut x = vec![0.0; n + m];
        for j in 0..n + m {
            match state[j] {
                VarState::Basic(_) => {}
                VarState::AtLower | VarState::AtUpper if lo[j] == up[j] => {
                    x[j] = lo[j];
                    state[j] = VarState::AtLower;
                }
                VarState::AtLower if lo[j].is_finite() => x[j] = lo[j],
                VarState::AtUpper if up[j].is_finite() => x[j] = up[j],
                // Fall back to the finite side, if any.
                VarState::AtLower if up[j].is_finite() => {
                    x[j] = up[j];
                    state[j] = VarState::AtUpper;
                }
                VarState::AtUpper if lo[j].is_finite() => {
                    x[j] = lo[j];
                    state[j] = VarState::AtLower;
                }
                _ => return None,
            }
        }
        let sign = match lp.sense {
            ObjectiveSense::Minimize => 1.0,
            ObjectiveSense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; n + m];
        for j in 0..n {
            cost[j] = sign * lp.objective[j];
        }
        let mut s = Self {
            lp,
            tol,
            m,
            n,
            cols,
            art_row: Vec::new(),
            art_sign: Vec::new(),
            lower: lo,
            upper: up,
            cost,
            x,
            state,
            basis: basis.basic.clone(),
            binv: vec![0.0; m * m],
            y: vec![0.0; m],
            rhs: lp.rows.iter().map(|r| r.rhs).collect(),
            iterations: 0,
            refactors: 0,
            alpha: vec![0.0; m],
        };
        s.refactor().ok()?;
        Some(s)
    }

    /// The current basis with artificials replaced by their rows' logicals.
    fn export_basis(&self) -> Basis {
        let (n, m) = (self.n, self.m);
        let basic = self
            .basis
            .iter()
            .map(|&b| if b >= n + m { n + self.art_row[b - n - m] } else { b })
            .collect();
        let at_upper = (0..n + m).map(|j| matches!(self.state[j], VarState::AtUpper)).collect();
        Basis { basic, at_upper }
    }

    /// Dual simplex from a loaded basis, then a primal clean-up pass.
    /// `Ok(None)` asks the caller to start over cold.
    fn run_dual(&mut self) -> Result<Option<LpSolution>, SolverError> {
        let (n, m) = (self.n, self.m);
        // Make the basis dual feasible by moving boxed columns to the
        // bound their reduced cost prefers.
        let mut flipped = false;
        for j in 0..n + m {
            if matches!(self.state[j], VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                continue;
            }
            let d = self.cost[j] - self.col_dot(j, &self.y);
            match self.state[j] {
                VarState::AtLower if d < -self.tol.dual => {
                    if !self.upper[j].is_finite() {
                        return Ok(None);
                    }
                    self.state[j] = VarState::AtUpper;
                    self.x[j] = self.upper[j];
                    flipped = true;
                }
                VarState::AtUpper if d > self.tol.dual => {
                    if !self.lower[j].is_finite() {
                        return Ok(None);
                    }
                    self.state[j] = VarState::AtLower;
                    self.x[j] = self.lower[j];
                    flipped = true;
                }
                _ => {}
            }
        }
        if flipped {
            self.recompute_primal();
        }
        let limit = 10 * (m + n) + 1000;
        let mut since_recompute = 0;
        let mut rho = vec![0.0; m];
        loop {
            self.iterations += 1;
            if self.iterations > limit {
                return Ok(None);
            }
            since_recompute += 1;
            if since_recompute >= RECOMPUTE_EVERY {
                since_recompute = 0;
                self.recompute_primal();
                self.recompute_duals();
            }
            // Leaving row: largest bound violation.
            let mut leave = None;
            let mut worst = 0.0;
            for (i, &b) in self.basis.iter().enumerate() {
                let v = (self.lower[b] - self.x[b]).max(self.x[b] - self.upper[b]);
                if v > self.tol.primal * (1.0 + self.x[b].abs()) && v > worst {
                    worst = v;
                    leave = Some(i);
                }
            }
            let Some(r) = leave else { break };
            let b = self.basis[r];
            let below = self.x[b] < self.lower[b];
            for (k, v) in rho.iter_mut().enumerate() {
                *v = self.binv[k * m + r];
            }
            // Entering column by a two-pass ratio test on reduced costs.
            let mut cands: Vec<(usize, f64, f64)> = Vec::new();
            for j in 0..n + m {
                let st = self.state[j];
                if matches!(st, VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let a = self.col_dot(j, &rho);
                if a.abs() < self.tol.pivot.max(1e-9) {
                    continue;
                }
                let ok = match (st, below) {
                    (VarState::AtLower, true) => a < 0.0,
                    (VarState::AtUpper, true) => a > 0.0,
                    (VarState::AtLower, false) => a > 0.0,
                    (VarState::AtUpper, false) => a < 0.0,
                    _ => false,
                };
                if ok {
                    let d = self.cost[j] - self.col_dot(j, &self.y);
                    cands.push((j, a, d));
                }
            }
            if cands.is_empty() {
                if worst < 1e-7 {
                    return Ok(None);
                }
                return Ok(Some(LpSolution::without_point(LpStatus::Infeasible, n, m, self.iterations)));
            }
            let tmax = cands.iter().map(|&(_, a, d)| (d.abs() + self.tol.dual) / a.abs()).fold(f64::INFINITY, f64::min);
            let (q, _, dq) = cands
                .iter()
                .copied()
                .filter(|&(_, a, d)| d.abs() / a.abs() <= tmax)
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()).then(y.0.cmp(&x.0)))
                .expect("the minimizer passes its own test");
            self.ftran(q);
            let ar = self.alpha[r];
            if ar.abs() < self.tol.pivot.max(1e-11) {
                return Ok(None);
            }
            let target = if below { self.lower[b] } else { self.upper[b] };
            let t = (self.x[b] - target) / ar;
            self.x[q] += t;
            for i in 0..m {
                let a = self.alpha[i];
                if a != 0.0 {
                    let bi = self.basis[i];
                    self.x[bi] -= a * t;
                }
            }
            self.x[b] = target;
            self.state[b] = if below { VarState::AtLower } else { VarState::AtUpper };
            self.pivot(r, q, dq);
        }
        self.recompute_primal();
        self.recompute_duals();
        match self.run_phase() {
            Ok(Step::Optimal) => {}
            Ok(_) => return Ok(None),
            Err(_) => return Ok(None),
        }
        Ok(Some(self.finish()))
    }

    fn total(&self) -> usize {
        self.x.len()
    }

    /// `Σ_i A_ij v_i` for any column (structural, logical, artificial).
    fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(i, a)| a * v[i]).sum()
        } else if j < self.n + self.m {
            v[j - self.n]
        } else {
            let k = j - self.n - self.m;
            self.art_sign[k] * v[self.art_row[k]]
        }
    }

    fn for_each_entry(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for &(i, a) in &self.cols[j] {
                f(i, a);
            }
        } else if j < self.n + self.m {
            f(j - self.n, 1.0);
        } else {
            let k = j - self.n - self.m;
            f(self.art_row[k], self.art_sign[k]);
        }
    }

    fn ftran(&mut self, q: usize) {
        let m = self.m;
        let mut alpha = std::mem::take(&mut self.alpha);
        alpha.iter_mut().for_each(|a| *a = 0.0);
        self.for_each_entry(q, |i, a| {
            let col = &self.binv[i * m..(i + 1) * m];
            for (out, b) in alpha.iter_mut().zip(col) {
                *out += a * b;
            }
        });
        self.alpha = alpha;
    }

    fn recompute_duals(&mut self) {
        let m = self.m;
        for k in 0..m {
            let col = &self.binv[k * m..(k + 1) * m];
            self.y[k] = self.basis.iter().zip(col).map(|(&b, v)| self.cost[b] * v).sum();
        }
    }

    fn recompute_primal(&mut self) {
        let m = self.m;
        let mut w = self.rhs.clone();
        for j in 0..self.total() {
            if matches!(self.state[j], VarState::Basic(_)) || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            self.for_each_entry(j, |i, a| w[i] -= a * xj);
        }
        let mut xb = vec![0.0; m];
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            let col = &self.binv[k * m..(k + 1) * m];
            for (out, b) in xb.iter_mut().zip(col) {
                *out += wk * b;
            }
        }
        for (i, &b) in self.basis.iter().enumerate() {
            self.x[b] = xb[i];
        }
    }

    fn max_residual(&self) -> f64 {
        let mut r = self.rhs.clone();
        for j in 0..self.total() {
            let xj = self.x[j];
            if xj != 0.0 {
                self.for_each_entry(j, |i, a| r[i] -= a * xj);
            }
        }
        r.iter()
            .zip(&self.rhs)
            .map(|(v, b)| v.abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max)
    }

    /// Rebuild the basis inverse. Column and row singletons are peeled off
    /// into triangular blocks; only the remaining nucleus is factorized
    /// densely. The inverse is then assembled one unit vector at a time.
    fn refactor(&mut self) -> Result<(), SolverError> {
        let m = self.m;
        self.refactors += 1;
        let singular = |s: &Self, what: &str| SolverError::NumericalBreakdown {
            iterations: s.iterations,
            detail: format!("singular basis during refactorization ({what})"),
        };
        let mut bcols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (pos, &b) in self.basis.iter().enumerate() {
            let mut col = Vec::new();
            self.for_each_entry(b, |i, a| col.push((i, a)));
            for &(i, a) in &col {
                rows[i].push((pos, a));
            }
            bcols.push(col);
        }
        let mut row_on = vec![true; m];
        let mut col_on = vec![true; m];
        let mut col_count: Vec<usize> = bcols.iter().map(Vec::len).collect();
        let mut row_count: Vec<usize> = rows.iter().map(Vec::len).collect();
        // (row, position, pivot value)
        let mut front: Vec<(usize, usize, f64)> = Vec::new();
        let mut back: Vec<(usize, usize, f64)> = Vec::new();

        let mut queue: Vec<usize> = (0..m).filter(|&p| col_count[p] == 1).collect();
        while let Some(pos) = queue.pop() {
            if !col_on[pos] || col_count[pos] != 1 {
                continue;
            }
            let Some(&(r, a)) = bcols[pos].iter().find(|&&(i, _)| row_on[i]) else { continue };
            if a.abs() < 1e-11 {
                continue;
            }
            row_on[r] = false;
            col_on[pos] = false;
            front.push((r, pos, a));
            for &(p2, _) in &rows[r] {
                if col_on[p2] {
                    col_count[p2] -= 1;
                    if col_count[p2] == 1 {
                        queue.push(p2);
                    }
                }
            }
        }
        for r in 0..m {
            row_count[r] = rows[r].iter().filter(|&&(p, _)| col_on[p]).count();
        }
        let mut queue: Vec<usize> = (0..m).filter(|&r| row_on[r] && row_count[r] == 1).collect();
        while let Some(r) = queue.pop() {
            if !row_on[r] || row_count[r] != 1 {
                continue;
            }
            let Some(&(pos, a)) = rows[r].iter().find(|&&(p, _)| col_on[p]) else { continue };
            if a.abs() < 1e-11 {
                continue;
            }
            row_on[r] = false;
            col_on[pos] = false;
            back.push((r, pos, a));
            for &(i2, _) in &bcols[pos] {
                if row_on[i2] {
                    row_count[i2] -= 1;
                    if row_count[i2] == 1 {
                        queue.push(i2);
                    }
                }
            }
        }

        // Dense LU of the nucleus with partial pivoting.
        let nrows: Vec<usize> = (0..m).filter(|&r| row_on[r]).collect();
        let ncols: Vec<usize> = (0..m).filter(|&p| col_on[p]).collect();
        if nrows.len() != ncols.len() {
            return Err(singular(self, "nucleus is not square"));
        }
        let k = nrows.len();
        let mut local_col = vec![usize::MAX; m];
        for (c, &p) in ncols.iter().enumerate() {
            local_col[p] = c;
        }
        let mut lu = vec![0.0; k * k];
        for (r, &i) in nrows.iter().enumerate() {
            for &(p, a) in &rows[i] {
                if local_col[p] != usize::MAX {
                    lu[r * k + local_col[p]] += a;
                }
            }
        }
        let mut perm: Vec<usize> = (0..k).collect();
        for c in 0..k {
            let piv = (c..k).max_by(|&a, &b| lu[a * k + c].abs().total_cmp(&lu[b * k + c].abs())).unwrap();
            if lu[piv * k + c].abs() < 1e-11 {
                return Err(singular(self, "nucleus pivot"));
            }
            if piv != c {
                for t in 0..k {
                    lu.swap(piv * k + t, c * k + t);
                }
                perm.swap(piv, c);
            }
            let p = lu[c * k + c];
            for r in c + 1..k {
                let f = lu[r * k + c] / p;
                if f != 0.0 {
                    lu[r * k + c] = f;
                    for t in c + 1..k {
                        lu[r * k + t] -= f * lu[c * k + t];
                    }
                } else {
                    lu[r * k + c] = 0.0;
                }
            }
        }

        // Column-oriented substitution so each solve only touches the
        // columns whose entries are nonzero.
        let mut x = vec![0.0; m];
        let mut w = vec![0.0; m];
        let mut rhs = vec![0.0; k];
        for unit in 0..m {
            x.iter_mut().for_each(|v| *v = 0.0);
            w.iter_mut().for_each(|v| *v = 0.0);
            w[unit] = 1.0;
            for &(r, pos, a) in &back {
                let v = w[r];
                if v == 0.0 {
                    continue;
                }
                let xv = v / a;
                x[pos] = xv;
                for &(i, b) in &bcols[pos] {
                    w[i] -= b * xv;
                }
            }
            if k > 0 {
                for (t, &i) in nrows.iter().enumerate() {
                    rhs[t] = w[i];
                }
                if rhs.iter().any(|&v| v != 0.0) {
                    let mut z: Vec<f64> = perm.iter().map(|&t| rhs[t]).collect();
                    for r in 0..k {
                        let mut v = z[r];
                        for t in 0..r {
                            v -= lu[r * k + t] * z[t];
                        }
                        z[r] = v;
                    }
                    for r in (0..k).rev() {
                        let mut v = z[r];
                        for t in r + 1..k {
                            v -= lu[r * k + t] * z[t];
                        }
                        z[r] = v / lu[r * k + r];
                    }
                    for (c, &p) in ncols.iter().enumerate() {
                        let xv = z[c];
                        if xv == 0.0 {
                            continue;
                        }
                        x[p] = xv;
                        for &(i, b) in &bcols[p] {
                            w[i] -= b * xv;
                        }
                    }
                }
            }
            for &(r, pos, a) in front.iter().rev() {
                let v = w[r];
                if v == 0.0 {
                    continue;
                }
                let xv = v / a;
                x[pos] = xv;
                for &(i, b) in &bcols[pos] {
                    w[i] -= b * xv;
                }
            }
            self.binv[unit * m..(unit + 1) * m].copy_from_slice(&x);
        }
        self.recompute_primal();
        self.recompute_duals();
        Ok(())
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.total() {
            let st = self.state[j];
            if matches!(st, VarState::Basic(_)) || self.lower[j] == self.upper[j] {
                continue;
            }
            let d = self.cost[j] - self.col_dot(j, &self.y);
            let eligible = match st {
                VarState::AtLower => d < -self.tol.dual,
                VarState::AtUpper => d > self.tol.dual,
                VarState::Basic(_) => false,
            };
            if !eligible {
                continue;
            }
            if bland {
                return Some((j, d));
            }
            if best.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                best = Some((j, d));
            }
        }
        best
    }

    fn iterate(&mut self, bland: &mut bool, degenerate: &mut usize) -> Result<Step, SolverError> {
        let Some((q, dq)) = self.entering(*bland) else {
            return Ok(Step::Optimal);
        };
        self.ftran(q);
        let dir = if dq < 0.0 { 1.0 } else { -1.0 };
        let flip = self.upper[q] - self.lower[q];

        let ratio = |s: &Self, i: usize, tolp: f64| -> Option<f64> {
            let a = s.alpha[i];
            if a.abs() < s.tol.pivot {
                return None;
            }
            let rate = -dir * a;
            let b = s.basis[i];
            if rate < 0.0 {
                s.lower[b].is_finite().then(|| ((s.x[b] - s.lower[b] + tolp) / -rate).max(0.0))
            } else {
                s.upper[b].is_finite().then(|| ((s.upper[b] - s.x[b] + tolp) / rate).max(0.0))
            }
        };

        let mut leave: Option<usize> = None;
        let mut t;
        if *bland {
            t = f64::INFINITY;
            for i in 0..self.m {
                if let Some(r) = ratio(self, i, 0.0) {
                    let better = r < t - 1e-12
                        || (r <= t + 1e-12 && leave.is_some_and(|l| self.basis[i] < self.basis[l]));
                    if better {
                        t = r;
                        leave = Some(i);
                    }
                }
            }
        } else {
            let mut tmax = f64::INFINITY;
            for i in 0..self.m {
                if let Some(r) = ratio(self, i, self.tol.primal) {
                    tmax = tmax.min(r);
                }
            }
            t = f64::INFINITY;
            if tmax.is_finite() {
                let mut best_abs = 0.0;
                for i in 0..self.m {
                    if let Some(r) = ratio(self, i, 0.0) {
                        if r <= tmax && self.alpha[i].abs() > best_abs {
                            best_abs = self.alpha[i].abs();
                            leave = Some(i);
                            t = r;
                        }
                    }
                }
            }
        }
        if flip <= t {
            t = flip;
            leave = None;
        }
        if !t.is_finite() {
            return Ok(Step::Unbounded);
        }

        // Move along the edge.
        self.x[q] += dir * t;
        for i in 0..self.m {
            let a = self.alpha[i];
            if a != 0.0 {
                let b = self.basis[i];
                self.x[b] -= dir * a * t;
            }
        }
        if t <= 1e-12 {
            *degenerate += 1;
            if *degenerate >= BLAND_AFTER_DEGENERATE {
                *bland = true;
            }
        } else {
            *degenerate = 0;
            *bland = false;
        }

        match leave {
            None => {
                let (st, v) = if dir > 0.0 {
                    (VarState::AtUpper, self.upper[q])
                } else {
                    (VarState::AtLower, self.lower[q])
                };
                self.state[q] = st;
                self.x[q] = v;
            }
            Some(r) => {
                let b = self.basis[r];
                let rate = -dir * self.alpha[r];
                if rate < 0.0 {
                    self.x[b] = self.lower[b];
                    self.state[b] = VarState::AtLower;
                } else {
                    self.x[b] = self.upper[b];
                    self.state[b] = VarState::AtUpper;
                }
                self.pivot(r, q, dq);
            }
        }
        Ok(Step::Continue)
    }

    fn pivot(&mut self, r: usize, q: usize, dq: f64) {
        let m = self.m;
        let ar = self.alpha[r];
        let theta = dq / ar;
        for k in 0..m {
            let e = self.binv[k * m + r];
            if e != 0.0 {
                self.y[k] += theta * e;
            }
        }
        for k in 0..m {
            let col = &mut self.binv[k * m..(k + 1) * m];
            let e = col[r];
            if e == 0.0 {
                continue;
            }
            let e = e / ar;
            for (v, a) in col.iter_mut().zip(&self.alpha) {
                *v -= e * a;
            }
            col[r] = e;
        }
        self.basis[r] = q;
        self.state[q] = VarState::Basic(r);
    }

    fn run_phase(&mut self) -> Result<Step, SolverError> {
        let limit = 50_000 + 50 * (self.m + self.total());
        let mut bland = false;
        let mut degenerate = 0;
        let mut since_recompute = 0;
        loop {
            self.iterations += 1;
            if self.iterations > limit {
                return Err(SolverError::NumericalBreakdown {
                    iterations: self.iterations,
                    detail: "iteration limit reached (cycling?)".into(),
                });
            }
            since_recompute += 1;
            if since_recompute >= RECOMPUTE_EVERY {
                since_recompute = 0;
                self.recompute_primal();
                self.recompute_duals();
            }
            match self.iterate(&mut bland, &mut degenerate)? {
                Step::Continue => {}
                Step::Unbounded => return Ok(Step::Unbounded),
                Step::Optimal => {
                    self.recompute_primal();
                    self.recompute_duals();
                    if self.max_residual() > 1e-9 || self.basic_infeasibility() > 1e-7 {
                        if self.refactors >= MAX_REFACTORS {
                            return Err(SolverError::NumericalBreakdown {
                                iterations: self.iterations,
                                detail: format!(
                                    "residual {:.3e}, basic infeasibility {:.3e} after {} refactorizations",
                                    self.max_residual(),
                                    self.basic_infeasibility(),
                                    self.refactors
                                ),
                            });
                        }
                        self.refactor()?;
                        if self.basic_infeasibility() > 1e-7 {
                            // Drift pushed basics out of bounds: restart from the slack basis.
                            return Err(SolverError::NumericalBreakdown {
                                iterations: self.iterations,
                                detail: format!(
                                    "basic infeasibility {:.3e} after refactorization",
                                    self.basic_infeasibility()
                                ),
                            });
                        }
                        continue;
                    }
                    // One more pricing pass with fresh duals.
                    if self.entering(false).is_none() {
                        return Ok(Step::Optimal);
                    }
                }
            }
        }
    }

    fn basic_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| (self.lower[b] - self.x[b]).max(self.x[b] - self.upper[b]).max(0.0))
            .fold(0.0, f64::max)
    }

    fn run(&mut self) -> Result<LpSolution, SolverError> {
        let (n, m) = (self.n, self.m);
        let first_art = n + m;
        if !self.art_row.is_empty() {
            for j in first_art..self.total() {
                self.cost[j] = 1.0;
            }
            self.recompute_duals();
            match self.run_phase()? {
                Step::Optimal => {}
                _ => {
                    return Err(SolverError::NumericalBreakdown {
                        iterations: self.iterations,
                        detail: "phase one reported unbounded".into(),
                    })
                }
            }
            let infeas: f64 = self.x[first_art..].iter().sum();
            let scale = 1.0 + self.rhs.iter().map(|b| b.abs()).fold(0.0, f64::max);
            if infeas > 1e-8 * scale {
                trace!("phase one ended with infeasibility {infeas:.3e}");
                return Ok(LpSolution::without_point(LpStatus::Infeasible, n, m, self.iterations));
            }
            for j in first_art..self.total() {
                self.cost[j] = 0.0;
                self.upper[j] = 0.0;
                if !matches!(self.state[j], VarState::Basic(_)) {
                    self.x[j] = 0.0;
                    self.state[j] = VarState::AtLower;
                }
            }
        }
        let sign = self.sense_sign();
        for j in 0..n {
            self.cost[j] = sign * self.lp.objective[j];
        }
        self.recompute_duals();
        match self.run_phase()? {
            Step::Unbounded => {
                return Ok(LpSolution::without_point(LpStatus::Unbounded, n, m, self.iterations));
            }
            Step::Optimal | Step::Continue => {}
        }
        Ok(self.finish())
    }

    fn sense_sign(&self) -> f64 {
        match self.lp.sense {
            ObjectiveSense::Minimize => 1.0,
            ObjectiveSense::Maximize => -1.0,
        }
    }

    fn finish(&self) -> LpSolution {
        let (n, sign) = (self.n, self.sense_sign());
        let x: Vec<f64> = self.x[..n].to_vec();
        let reduced_costs: Vec<f64> = (0..n)
            .map(|j| {
                if matches!(self.state[j], VarState::Basic(_)) {
                    0.0
                } else {
                    sign * (self.cost[j] - self.col_dot(j, &self.y))
                }
            })
            .collect();
        let duals: Vec<f64> = self.y.iter().map(|v| sign * v).collect();
        let objective = self.lp.evaluate(&x);
        LpSolution { status: LpStatus::Optimal, x, duals, reduced_costs, objective, iterations: self.iterations }
    }
}
