//! Small hand-checkable scenarios used by tests, examples and the CLI.
//!
//! Node ids are 0-based: E1's nodes are 0, 1, 2 with node 2 the destination.

use crate::model::{ComputeCost, ComputeKind, Link, LinkCost, Network, Scenario, Task};
use crate::strategy::Strategy;

fn linear_scenario(
    n: usize,
    forward: &[(usize, usize, f64)],
    reverse_weight: f64,
    unit_costs: &[f64],
    tasks: Vec<Task>,
) -> Scenario {
    let mut links = Vec::new();
    let mut costs = Vec::new();
    for &(u, v, w) in forward {
        links.push(Link { from: u, to: v });
        costs.push(LinkCost::Linear(w));
    }
    for &(u, v, _) in forward {
        links.push(Link { from: v, to: u });
        costs.push(LinkCost::Linear(reverse_weight));
    }
    Scenario {
        network: Network::new(n, links).expect("fixture links are valid"),
        link_costs: costs,
        compute: unit_costs
            .iter()
            .map(|&c| ComputeCost {
                kind: ComputeKind::SumLinear,
                s: 1.0,
                c: vec![c],
            })
            .collect(),
        tasks,
        seed: 0,
    }
}

/// Three-node line with a cheap compute node in the middle.
///
/// Links 0->1, 1->2, 0->2 cost 1 per unit, their reverses 100. Unit
/// computation costs are 10, 1, 10. One task with destination 2, result ratio
/// 0.5 and unit input at node 0. The optimum sends the data to node 1,
/// computes there and forwards the result to node 2, for a cost of 2.5.
pub fn e1() -> Scenario {
    linear_scenario(
        3,
        &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
        100.0,
        &[10.0, 1.0, 10.0],
        vec![Task {
            dest: 2,
            m: 0,
            a: 0.5,
            rates: vec![1.0, 0.0, 0.0],
        }],
    )
}

/// E1's graph with the task's destination at its only source (node 0).
/// Local computation is optimal with cost 10.
pub fn e0() -> Scenario {
    let mut s = e1();
    s.tasks[0].dest = 0;
    s
}

/// Four-node instance with a stationary point that is not optimal.
///
/// Links 0->1, 1->2, 1->3 cost 1, 2->3 costs 2, 0->3 costs 3, reverses 100.
/// Unit computation costs are 10, 10, 1, 1; destination 3, result ratio 1 and
/// unit input at node 0. See [`f3_stationary_strategy`].
pub fn f3() -> Scenario {
    linear_scenario(
        4,
        &[
            (0, 1, 1.0),
            (1, 2, 1.0),
            (1, 3, 1.0),
            (2, 3, 2.0),
            (0, 3, 3.0),
        ],
        100.0,
        &[10.0, 10.0, 1.0, 1.0],
        vec![Task {
            dest: 3,
            m: 0,
            a: 1.0,
            rates: vec![1.0, 0.0, 0.0, 0.0],
        }],
    )
}

/// E1 optimum: data 0 -> 1, compute at 1, results 1 -> 2 (and 0 -> 2).
pub fn e1_optimal_strategy(s: &Scenario) -> Strategy {
    let net = &s.network;
    let mut st = Strategy::blank(s);
    st.set_data_next(net, 0, 0, Some(1));
    st.set_result_next(net, 0, 0, Some(2));
    st.set_result_next(net, 0, 1, Some(2));
    st
}

/// E1 with everything computed at the source and the result sent straight
/// to the destination (cost 10.5).
pub fn e1_local_strategy(s: &Scenario) -> Strategy {
    let net = &s.network;
    let mut st = Strategy::blank(s);
    st.set_result_next(net, 0, 0, Some(2));
    st.set_result_next(net, 0, 1, Some(2));
    st
}

/// E0 optimum: every node computes locally, results go straight to node 0.
pub fn e0_optimal_strategy(s: &Scenario) -> Strategy {
    let net = &s.network;
    let mut st = Strategy::blank(s);
    st.set_result_next(net, 0, 1, Some(0));
    st.set_result_next(net, 0, 2, Some(0));
    st
}

/// F3 stationary point: node 0 sends its data over the expensive direct link
/// and node 3 computes (cost 4). Node 1 carries no traffic but would send data
/// to node 2, although forwarding straight to node 3 has a smaller augmented
/// marginal. Every positive-traffic row is stationary, yet the strategy is
/// not optimal: 0 -> 1 -> 3 with computation at 3 costs 3.
pub fn f3_stationary_strategy(s: &Scenario) -> Strategy {
    let net = &s.network;
    let mut st = Strategy::blank(s);
    st.set_data_next(net, 0, 0, Some(3));
    st.set_data_next(net, 0, 1, Some(2));
    st.set_result_next(net, 0, 0, Some(1));
    st.set_result_next(net, 0, 1, Some(3));
    st.set_result_next(net, 0, 2, Some(3));
    st
}
