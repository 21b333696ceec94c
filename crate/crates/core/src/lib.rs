//! Volume-allocation policies and carrier-capacity planning for container
//! drayage under uncertain inflows, outflows and spot rates.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: instances, states, scenarios and capacity plans.
//! - [`lp`]: a dense bounded-variable simplex.
//! - [`alloc`]: the per-period allocation problem and stock dynamics.
//! - [`scenario`]: enumeration and sampling of exogenous realizations.
//! - [`dp`]: backward induction, policy extraction and rollout.
//! - [`mslp`]: the per-scenario multistage linear relaxation.
//! - [`optim`]: projected limited-memory BFGS on a box.
//! - [`capopt`]: capacity reservation search.
//! - [`eval`]: regret and summary statistics.

pub mod alloc;
pub mod capopt;
pub mod cli;
pub mod dp;
pub mod error;
pub mod eval;
pub mod lp;
pub mod model;
pub mod mslp;
pub mod optim;
pub mod reference;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{CapacityPlan, ExogenousRealization, Instance, Scenario, SystemState};
