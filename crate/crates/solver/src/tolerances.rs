//! Numerical tolerances used across the LP and MILP solvers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Row and bound feasibility accepted for a reported point.
    pub feasibility: f64,
    /// Strong-duality agreement required of an LP optimum.
    pub lp_optimality: f64,
    /// Default relative MIP gap.
    pub mip_gap: f64,
    /// Distance from {0, 1} under which a binary counts as integral.
    pub integrality: f64,
    /// Simplex-internal bound tolerance on basic variables.
    pub primal: f64,
    /// Simplex-internal reduced-cost tolerance.
    pub dual: f64,
    /// Smallest pivot magnitude accepted by the ratio test.
    pub pivot: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        feasibility: 1e-6,
        lp_optimality: 1e-8,
        mip_gap: 1e-4,
        integrality: 1e-6,
        primal: 1e-9,
        dual: 1e-9,
        pivot: 1e-9,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}
