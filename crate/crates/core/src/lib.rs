//! Regret estimation for stochastic optimization.
//!
//! Regret is the expected shortfall from acting on the mean cost instead of
//! the realized cost. It splits exactly into the covariance between costs and
//! optimal decisions plus a residual driven by the curvature of the decision
//! map. This crate provides:
//!
//! * [`prob`]: dense covariance handling and seeded Gaussian sampling,
//! * [`problems`]: exact solvers for LPs, QPs, 0/1 knapsack and grid
//!   shortest paths,
//! * [`estimators`]: one-pass covariance, empirical, SAA and residual
//!   estimators,
//! * [`bounds`]: residual bounds, concentration sample sizes and CLT
//!   intervals,
//! * [`replication`], [`spo`], [`portfolio`]: the experiment pipelines.
//!
//! Regret follows the minimization convention and is nonpositive for linear
//! objectives: `E[c'pi(c)] - E[c'pi(E c)] <= 0`.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod par;
pub mod portfolio;
pub mod prob;
pub mod problems;
pub mod replication;
pub mod spo;

pub use error::{Error, Result};
pub use estimators::{MeanMode, Method, RegretEstimate, SamplePairs};
pub use prob::{CostDistribution, CovMatrix, SampleMatrix, Seed};
pub use problems::{DecisionOracle, DecisionVector, SolveStatus};

/// Feasibility and KKT tolerance shared by every solver and invariant check.
pub const FEASIBILITY_TOL: f64 = 1e-8;
