//! Stochastic bilevel pricing between an energy supplier and a smart grid
//! operator: instance data, the follower LP, the single-level MILP,
//! rolling-horizon control and baselines.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod follower_lp;
pub mod model;
pub mod reformulation;
pub mod rolling_horizon;
pub mod scenario;

pub use error::{CoreError, Result};
