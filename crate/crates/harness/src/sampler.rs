//! Random scenario sampling.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use cec_core::{ComputeCost, ComputeKind, LinkCost, Scenario, Task};

use crate::config::{ExperimentConfig, LinkFamily};
use crate::error::{HarnessError, Result};
use crate::topology::{gen_topology, Topology};

const TOPOLOGY_STREAM: u64 = 0;
const PARAMETER_STREAM: u64 = 1;

/// Sampled scenario together with the topology labels and the factor applied
/// to the raw input rates by the utilization cap.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scenario: Scenario,
    pub topology: Topology,
    pub rate_factor: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn exponential(mean: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let law = Exp::new(1.0 / mean).map_err(|e| HarnessError::Config(format!("exponential mean {mean}: {e}")))?;
    Ok(law.sample(rng))
}

pub fn sample_scenario(config: &ExperimentConfig, seed: u64) -> Result<Sample> {
    config.validate()?;
    let topology = gen_topology(&config.topology, &mut stream(seed, TOPOLOGY_STREAM))?;
    let network = topology.network()?;
    let n = network.num_nodes();
    if config.sources_per_task > n {
        return Err(HarnessError::Config(format!(
            "{} sources per task exceed the {n} nodes",
            config.sources_per_task
        )));
    }
    let mut rng = stream(seed, PARAMETER_STREAM);

    // Both directions of an edge share one parameter.
    let mut link_costs = vec![LinkCost::Linear(0.0); network.num_links()];
    for &(u, v) in &topology.edges {
        let d = config.link_param.clamp(rng.random_range(0.0..=2.0 * config.link_param_mean));
        let cost = match config.link_cost {
            LinkFamily::Linear => LinkCost::Linear(d),
            LinkFamily::Queue => LinkCost::Queue(d),
        };
        for (a, b) in [(u, v), (v, u)] {
            let id = network.find_link(a, b).expect("edge is present in both directions");
            link_costs[id] = cost;
        }
    }

    let mut compute = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = match config.compute_cost {
            ComputeKind::SumQueue => exponential(config.compute_param_mean, &mut rng)?,
            ComputeKind::SumLinear => rng.random_range(0.0..=2.0 * config.compute_param_mean),
        };
        let c = (0..config.types)
            .map(|_| rng.random_range(config.type_weight.lo..=config.type_weight.hi))
            .collect();
        compute.push(ComputeCost { kind: config.compute_cost, s: config.compute_param.clamp(raw), c });
    }

    let mut tasks = Vec::with_capacity(config.tasks);
    for _ in 0..config.tasks {
        let dest = rng.random_range(0..n);
        let m = rng.random_range(0..config.types);
        let a = config.result_ratio.clamp(exponential(config.result_ratio_mean, &mut rng)?);
        let mut rates = vec![0.0; n];
        for i in sample(&mut rng, n, config.sources_per_task) {
            rates[i] = rng.random_range(config.rate.lo..=config.rate.hi);
        }
        tasks.push(Task { dest, m, a, rates });
    }

    let mut scenario = Scenario { network, link_costs, compute, tasks, seed };
    let rate_factor = match (config.max_utilization, config.compute_cost) {
        (Some(cap), ComputeKind::SumQueue) => {
            let u = utilization(&scenario);
            if u > cap { cap / u } else { 1.0 }
        }
        _ => 1.0,
    };
    if rate_factor < 1.0 {
        scenario = scenario.scale_rates(rate_factor);
    }
    cec_core::validate_scenario(&scenario).into_result()?;
    Ok(Sample { scenario, topology, rate_factor })
}

/// Estimated computation demand over total computation capacity, taking the
/// network-wide mean weight of each task's type.
pub fn utilization(scenario: &Scenario) -> f64 {
    let n = scenario.num_nodes() as f64;
    let capacity: f64 = scenario.compute.iter().filter_map(ComputeCost::capacity).sum();
    if capacity <= 0.0 {
        return 0.0;
    }
    let demand: f64 = scenario
        .tasks
        .iter()
        .map(|t| t.total_rate() * scenario.compute.iter().map(|c| c.c[t.m]).sum::<f64>() / n)
        .sum();
    demand / capacity
}
