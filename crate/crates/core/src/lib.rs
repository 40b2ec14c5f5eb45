//! Joint routing and partial computation offloading in collaborative edge
//! networks with congestion-dependent costs.
//!
//! The crate models a network of devices that forward input data toward
//! computation nodes and forward results toward destinations, evaluates the
//! induced flows and costs, computes marginal costs, and optimizes the
//! forwarding/computation fractions with a distributed scaled gradient
//! projection method. Baselines and optimality oracles are included.

pub mod baselines;
pub mod broadcast;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod init;
pub mod marginals;
pub mod model;
pub mod oracle;
pub mod paths;
pub mod sgp;
pub mod strategy;

pub use error::{Error, Result};
pub use flow::{evaluate_flows, total_cost, FlowState};
pub use init::initial_strategy;
pub use model::{
    validate_scenario, ComputeCost, ComputeKind, Evaluated, Link, LinkCost, Network, Scenario,
    Task,
};
pub use strategy::{detect_loops, FlowClass, Strategy};
pub use marginals::{check_lemma1_gap, check_theorem1_gap, compute_marginals, MarginalState};
pub use sgp::{Optimizer, RunResult, Scaling, Schedule, UpdateConfig};
