//! LP and MILP solving for the pricing models: a bounded-variable primal
//! simplex with dual certificates, a best-bound branch-and-bound, LP-format
//! import/export, and a pluggable backend registry.

pub mod backend;
pub mod error;
pub mod lp;
pub mod lp_format;
pub mod milp;
mod propagate;
pub mod simplex;
pub mod tolerances;

pub use backend::{BackendRegistry, BundledBackend, ProcessBackend, SolverBackend};
pub use error::SolverError;
pub use lp::{Constraint, LinearProgram, LpSolution, LpStatus, ObjectiveSense, Sense};
pub use milp::{solve_milp, BranchingRule, Heuristic, MilpModel, MilpSolution, MilpStatus, SolveOptions};
pub use simplex::{solve_lp, solve_lp_with};
pub use tolerances::Tolerances;
