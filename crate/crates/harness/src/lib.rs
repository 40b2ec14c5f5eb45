//! Scenario generation and experiment orchestration for the collaborative
//! edge computing optimizer.

pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod sampler;
pub mod topology;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiments::{Mode, ExperimentRecord};
pub use metrics::{travel_distance, TravelDistance};
pub use sampler::{sample_scenario, Sample};
pub use topology::{gen_topology, Topology, TopologyName, TopologySpec};
