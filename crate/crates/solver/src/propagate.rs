//! Activity-based bound propagation used at every branch-and-bound node.

use crate::lp::{LinearProgram, Sense};

/// Minimum and maximum row activity under the current bounds. Infinite
/// contributions are counted separately so a single unbounded column can
/// still be tightened against the remaining finite part.
#[derive(Debug, Clone, Copy)]
struct Activity {
    min: f64,
    min_inf: usize,
    max: f64,
    max_inf: usize,
}

fn activity(coeffs: &[(usize, f64)], lower: &[f64], upper: &[f64]) -> Activity {
    let mut act = Activity { min: 0.0, min_inf: 0, max: 0.0, max_inf: 0 };
    for &(j, a) in coeffs {
        let (lo, hi) = if a > 0.0 { (lower[j], upper[j]) } else { (upper[j], lower[j]) };
        if lo.is_finite() {
            act.min += a * lo;
        } else {
            act.min_inf += 1;
        }
        if hi.is_finite() {
            act.max += a * hi;
        } else {
            act.max_inf += 1;
        }
    }
    act
}

pub(crate) struct Propagator<'a> {
    lp: &'a LinearProgram,
    col_rows: Vec<Vec<usize>>,
    integer: Vec<bool>,
}

const FEAS_TOL: f64 = 1e-7;

impl<'a> Propagator<'a> {
    pub(crate) fn new(lp: &'a LinearProgram, binaries: &[usize]) -> Self {
        let mut col_rows = vec![Vec::new(); lp.num_cols()];
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if a != 0.0 && col_rows[j].last() != Some(&i) {
                    col_rows[j].push(i);
                }
            }
        }
        let mut integer = vec![false; lp.num_cols()];
        for &j in binaries {
            integer[j] = true;
        }
        Self { lp, col_rows, integer }
    }

    pub(crate) fn col_rows(&self, j: usize) -> &[usize] {
        &self.col_rows[j]
    }

    /// Tighten `lower`/`upper` in place. Returns `false` if some row is
    /// proven infeasible.
    pub(crate) fn propagate(&self, lower: &mut [f64], upper: &mut [f64], dirty_cols: &[usize]) -> bool {
        let m = self.lp.num_rows();
        let mut queued = vec![false; m];
        let mut queue = std::collections::VecDeque::new();
        if dirty_cols.is_empty() {
            for i in 0..m {
                queued[i] = true;
                queue.push_back(i);
            }
        } else {
            for &j in dirty_cols {
                for &i in &self.col_rows[j] {
                    if !queued[i] {
                        queued[i] = true;
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut budget = 20 * m + 1000;
        while let Some(i) = queue.pop_front() {
            queued[i] = false;
            if budget == 0 {
                break;
            }
            budget -= 1;
            let row = &self.lp.rows[i];
            let act = activity(&row.coeffs, lower, upper);
            let b = row.rhs;
            let tol = FEAS_TOL * (1.0 + b.abs());
            let le = matches!(row.sense, Sense::Le | Sense::Eq);
            let ge = matches!(row.sense, Sense::Ge | Sense::Eq);
            if le && act.min_inf == 0 && act.min > b + tol {
                return false;
            }
            if ge && act.max_inf == 0 && act.max < b - tol {
                return false;
            }
            for &(j, a) in &row.coeffs {
                if a == 0.0 {
                    continue;
                }
                let mut new_lo = lower[j];
                let mut new_hi = upper[j];
                if le {
                    // a·x_j <= b - (min activity of the others)
                    let own = if a > 0.0 { lower[j] } else { upper[j] };
                    if let Some(rest) = residual(act.min, act.min_inf, a * own) {
                        let lim = (b - rest) / a;
                        if a > 0.0 {
                            new_hi = new_hi.min(lim);
                        } else {
                            new_lo = new_lo.max(lim);
                        }
                    }
                }
                if ge {
                    let own = if a > 0.0 { upper[j] } else { lower[j] };
                    if let Some(rest) = residual(act.max, act.max_inf, a * own) {
                        let lim = (b - rest) / a;
                        if a > 0.0 {
                            new_lo = new_lo.max(lim);
                        } else {
                            new_hi = new_hi.min(lim);
                        }
                    }
                }
                if self.integer[j] {
                    new_lo = (new_lo - 1e-6).ceil();
                    new_hi = (new_hi + 1e-6).floor();
                }
                let mut changed = false;
                if new_lo > lower[j] + 1e-7 * (1.0 + new_lo.abs()) {
                    lower[j] = new_lo;
                    changed = true;
                }
                if new_hi < upper[j] - 1e-7 * (1.0 + new_hi.abs()) {
                    upper[j] = new_hi;
                    changed = true;
                }
                if lower[j] > upper[j] {
                    if lower[j] > upper[j] + FEAS_TOL * (1.0 + upper[j].abs()) || self.integer[j] {
                        return false;
                    }
                    let mid = 0.5 * (lower[j] + upper[j]);
                    lower[j] = mid;
                    upper[j] = mid;
                }
                if changed {
                    for &k in &self.col_rows[j] {
                        if k != i && !queued[k] {
                            queued[k] = true;
                            queue.push_back(k);
                        }
                    }
                }
            }
        }
        true
    }
}

/// Activity of the other columns, given the total and this column's term.
fn residual(total: f64, inf_count: usize, own: f64) -> Option<f64> {
    match (inf_count, own.is_finite()) {
        (0, _) => Some(total - own),
        (1, false) => Some(total),
        _ => None,
    }
}
