//! Sparse linear program representation shared by the LP and MILP solvers.

use serde::{Deserialize, Serialize};

use crate::error::SolverError;

/// Direction of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    /// `a·x <= b`
    Le,
    /// `a·x >= b`
    Ge,
    /// `a·x == b`
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

/// One row of the constraint matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// A linear program `opt c·x + c0` subject to sparse rows and column bounds.
///
/// Every column needs a finite lower bound or a finite upper bound; columns
/// free in both directions are rejected by [`LinearProgram::check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: ObjectiveSense,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Constraint>,
    /// Optional column names, used by the LP file writer.
    #[serde(default)]
    pub col_names: Vec<String>,
    /// Optional row names, used by the LP file writer.
    #[serde(default)]
    pub row_names: Vec<String>,
}

impl LinearProgram {
    pub fn new(sense: ObjectiveSense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            objective_offset: 0.0,
            lower: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
            col_names: Vec::new(),
            row_names: Vec::new(),
        }
    }

    pub fn num_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_col(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        if !self.col_names.is_empty() {
            let j = self.objective.len() - 1;
            self.col_names.push(format!("x{j}"));
        }
        self.objective.len() - 1
    }

    pub fn add_named_col(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        if self.col_names.len() < self.objective.len() {
            self.col_names = (0..self.objective.len()).map(|j| format!("x{j}")).collect();
        }
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.col_names.push(name.into());
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Constraint { coeffs, sense, rhs });
        if !self.row_names.is_empty() {
            let i = self.rows.len() - 1;
            self.row_names.push(format!("r{i}"));
        }
        self.rows.len() - 1
    }

    pub fn add_named_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        if self.row_names.len() < self.rows.len() {
            self.row_names = (0..self.rows.len()).map(|i| format!("r{i}")).collect();
        }
        self.rows.push(Constraint { coeffs, sense, rhs });
        self.row_names.push(name.into());
        self.rows.len() - 1
    }

    pub fn col_name(&self, j: usize) -> String {
        self.col_names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))
    }

    pub fn row_name(&self, i: usize) -> String {
        self.row_names.get(i).cloned().unwrap_or_else(|| format!("r{i}"))
    }

    /// Objective value of `x`, including the constant offset.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Structural consistency: dimensions, indices, bounds.
    pub fn check(&self) -> Result<(), SolverError> {
        let n = self.num_cols();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::InvalidModel(format!(
                "bound vectors have lengths {}/{} for {} columns",
                self.lower.len(),
                self.upper.len(),
                n
            )));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u {
                return Err(SolverError::InvalidModel(format!("column {j} has bounds [{l}, {u}]")));
            }
            if l == f64::NEG_INFINITY && u == f64::INFINITY {
                return Err(SolverError::InvalidModel(format!("column {j} is free in both directions")));
            }
            if !self.objective[j].is_finite() {
                return Err(SolverError::InvalidModel(format!("column {j} has non-finite cost")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::InvalidModel(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(SolverError::InvalidModel(format!("row {i} references column {j} with coefficient {a}")));
                }
            }
        }
        Ok(())
    }

    /// Column-major copy of the constraint matrix, merging duplicate entries.
    pub(crate) fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_cols()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                match cols[j].last_mut() {
                    Some(last) if last.0 == i => last.1 += a,
                    _ => cols[j].push((i, a)),
                }
            }
        }
        for col in &mut cols {
            col.retain(|&(_, a)| a != 0.0);
        }
        cols
    }
}

/// Termination status of an LP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of an LP solve.
///
/// `duals` are Lagrange multipliers in the objective's own sense: for an
/// optimal solution `objective = offset + Σ rhs·dual + Σ bound·reduced_cost`
/// where the bound term uses the bound each nonbasic column sits at.
/// For a minimization, `>=` rows carry nonnegative duals and `<=` rows
/// nonpositive ones; a maximization flips both signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn without_point(status: LpStatus, n: usize, m: usize, iterations: usize) -> Self {
        Self {
            status,
            x: vec![0.0; n],
            duals: vec![0.0; m],
            reduced_costs: vec![0.0; n],
            objective: f64::NAN,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Dual objective `offset + Σ rhs·y + Σ bound·d`, equal to the primal
    /// objective at an optimal basis.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let rows: f64 = lp.rows.iter().zip(&self.duals).map(|(r, y)| r.rhs * y).sum();
        let bounds: f64 = (0..lp.num_cols())
            .map(|j| {
                let d = self.reduced_costs[j];
                if d == 0.0 {
                    0.0
                } else if (self.x[j] - lp.lower[j]).abs() <= (self.x[j] - lp.upper[j]).abs() {
                    d * lp.lower[j]
                } else {
                    d * lp.upper[j]
                }
            })
            .sum();
        lp.objective_offset + rows + bounds
    }
}
