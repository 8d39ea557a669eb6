//! Exponential utility maximization in a jump-diffusion market through the
//! quadratic BSDE with jumps, solved by least-squares Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod control;
pub mod driver;
pub mod error;
pub mod golden;
pub mod market;
pub mod oracle;
pub mod paths;
pub mod regression;
pub mod solver;

pub use config::RunConfig;
pub use control::{optimal_strategy, r_process, value_function, StrategyPath};
pub use driver::{driver_eval, driver_truncated, DriverEval};
pub use error::{Error, Result};
pub use market::{Claim, ConstraintSet, JumpSpec, MarketSpec, StepFn, TimeGrid};
pub use oracle::{dp_value, tree_bsde, ActionGrid, TreeModel};
pub use paths::{evolve_price, evolve_wealth, simulate_paths, PathBundle, PricePaths};
pub use regression::RegressionConfig;
pub use solver::{
    a_priori_bounds, solve_bsde, solve_bsde_with, solve_sequence, BsdeSolution, Generator,
    LadderMode,
};
