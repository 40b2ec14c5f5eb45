//! Construction of a feasible, loop-free starting strategy.

use crate::error::{Error, Result};
use crate::flow::{evaluate_flows, sweep_task};
use crate::model::{Evaluated, Scenario};
use crate::paths::{min_hop_to, shortest_to, Labels};
use crate::strategy::{Strategy, TaskStrategy};

/// Returns a loop-free strategy with finite cost.
///
/// Attempt 1 computes each task entirely at the node minimizing the zero-flow
/// linearized cost and routes on min-hop trees. Attempt 2 spreads the
/// computation uniformly along the same data paths. Attempt 3 places tasks one
/// at a time, largest first, choosing node, spreading and routes against the
/// load left by the tasks already placed.
pub fn initial_strategy(scenario: &Scenario) -> Result<Strategy> {
    for spread in [false, true] {
        let st = linearized_placement(scenario, spread);
        if evaluate_flows(scenario, &st)?.feasible {
            return Ok(st);
        }
    }
    if let Some(st) = load_aware_placement(scenario)? {
        if evaluate_flows(scenario, &st)?.feasible {
            return Ok(st);
        }
    }
    Err(Error::NoFeasibleStart(
        "no placement of the tasks keeps every cost finite".into(),
    ))
}

/// Zero-flow linearized cost of computing all of task `k` at each node.
pub fn linearized_placement_costs(scenario: &Scenario, k: usize) -> Vec<f64> {
    let net = &scenario.network;
    let task = &scenario.tasks[k];
    let len: Vec<f64> = scenario.link_costs.iter().map(|c| c.marginal_at_zero()).collect();
    let res = shortest_to(net, task.dest, &len);
    let total = task.total_rate();
    (0..net.num_nodes())
        .map(|v| {
            let data = shortest_to(net, v, &len);
            let transport: f64 = task.sources().map(|i| task.rates[i] * data.dist[i]).sum();
            transport
                + total * (scenario.compute[v].marginal_at_zero(task.m) + task.a * res.dist[v])
        })
        .collect()
}

pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Writes rows for one task: data follows `data_next` toward `v` (computing
/// along the way with fraction `1/(depth+1)` when `spread`), results follow
/// `result_next` toward the destination.
pub(crate) fn tree_rows(
    scenario: &Scenario,
    k: usize,
    v: usize,
    data: &Labels,
    result_next: &[Option<usize>],
    spread: bool,
) -> TaskStrategy {
    let net = &scenario.network;
    let n = net.num_nodes();
    let dest = scenario.tasks[k].dest;
    let mut depth = vec![0usize; n];
    for u in 0..n {
        let mut w = u;
        while let Some(x) = data.next[w] {
            depth[u] += 1;
            w = x;
        }
    }
    let mut ts = TaskStrategy {
        data: (0..n).map(|i| vec![0.0; 1 + net.out(i).len()]).collect(),
        result: (0..n).map(|i| vec![0.0; net.out(i).len()]).collect(),
    };
    for u in 0..n {
        match data.next[u] {
            Some(w) if u != v => {
                let p = crate::strategy::position(net, u, w).expect("tree edge");
                let local = if spread { 1.0 / (depth[u] as f64 + 1.0) } else { 0.0 };
                ts.data[u][0] = local;
                ts.data[u][1 + p] = 1.0 - local;
            }
            _ => ts.data[u][0] = 1.0,
        }
        if u != dest {
            let w = result_next[u].expect("strongly connected network");
            let p = crate::strategy::position(net, u, w).expect("tree edge");
            ts.result[u][p] = 1.0;
        }
    }
    ts
}

fn linearized_placement(scenario: &Scenario, spread: bool) -> Strategy {
    let net = &scenario.network;
    let mut st = Strategy::blank(scenario);
    for k in 0..scenario.num_tasks() {
        let v = argmin(&linearized_placement_costs(scenario, k));
        let data = min_hop_to(net, v);
        let result = min_hop_to(net, scenario.tasks[k].dest);
        st.tasks[k] = tree_rows(scenario, k, v, &data, &result.next, spread);
    }
    st
}

/// Shortest-path labels under the current link marginals, falling back to
/// min-hop successors where congestion leaves no finite path.
fn congested_tree(scenario: &Scenario, target: usize, lengths: &[f64]) -> Labels {
    let net = &scenario.network;
    let mut l = shortest_to(net, target, lengths);
    if l.dist.iter().any(|d| !d.is_finite()) {
        let hop = min_hop_to(net, target);
        // Detach unreachable nodes and graft them onto the hop tree, which is
        // consistent because every finite-label node already reaches target.
        for u in 0..net.num_nodes() {
            if !l.dist[u].is_finite() {
                l.next[u] = hop.next[u];
            }
        }
        // Grafting can still form cycles through detached nodes; fall back
        // entirely to the hop tree when it does.
        for u in 0..net.num_nodes() {
            if crate::paths::follow(&l.next, u).last() != Some(&target) {
                return hop;
            }
        }
    }
    l
}

fn load_aware_placement(scenario: &Scenario) -> Result<Option<Strategy>> {
    let net = &scenario.network;
    let n = net.num_nodes();
    let mt = scenario.num_types();
    let mut st = Strategy::blank(scenario);
    let mut link_flow = vec![0.0; net.num_links()];
    let mut loads = vec![vec![0.0; mt]; n];
    let mut order: Vec<usize> = (0..scenario.num_tasks()).collect();
    order.sort_by(|&x, &y| {
        scenario.tasks[y]
            .total_rate()
            .total_cmp(&scenario.tasks[x].total_rate())
            .then(x.cmp(&y))
    });

    let link_cost = |l: usize, f: f64| -> Result<f64> {
        Ok(scenario.link_costs[l].eval(f)?.map(|e| e.cost).or_infinity())
    };
    let node_cost = |i: usize, g: &[f64]| -> Result<f64> {
        Ok(scenario.compute[i].eval(g)?.map(|e| e.cost).or_infinity())
    };

    for &k in &order {
        let task = &scenario.tasks[k];
        let mut lengths = Vec::with_capacity(net.num_links());
        for (l, c) in scenario.link_costs.iter().enumerate() {
            lengths.push(match c.eval(link_flow[l])? {
                Evaluated::Finite(e) => e.first,
                Evaluated::Infeasible => f64::INFINITY,
            });
        }
        let result = congested_tree(scenario, task.dest, &lengths);
        let mut best: Option<(f64, TaskStrategy)> = None;
        for v in 0..n {
            let data = congested_tree(scenario, v, &lengths);
            for spread in [false, true] {
                st.tasks[k] = tree_rows(scenario, k, v, &data, &result.next, spread);
                let (tf, _, _) = sweep_task(scenario, &st, k, &[])?;
                let mut delta = 0.0;
                for l in 0..net.num_links() {
                    let add = tf.f_data[l] + tf.f_result[l];
                    if add > 0.0 {
                        delta += link_cost(l, link_flow[l] + add)? - link_cost(l, link_flow[l])?;
                    }
                }
                for i in 0..n {
                    if tf.g[i] > 0.0 {
                        let mut g = loads[i].clone();
                        g[task.m] += tf.g[i];
                        delta += node_cost(i, &g)? - node_cost(i, &loads[i])?;
                    }
                }
                if delta.is_finite() && best.as_ref().is_none_or(|(b, _)| delta < *b) {
                    best = Some((delta, st.tasks[k].clone()));
                }
            }
        }
        let Some((_, rows)) = best else {
            return Ok(None);
        };
        st.tasks[k] = rows;
        let (tf, _, _) = sweep_task(scenario, &st, k, &[])?;
        for l in 0..net.num_links() {
            link_flow[l] += tf.f_data[l] + tf.f_result[l];
        }
        for i in 0..n {
            loads[i][task.m] += tf.g[i];
        }
    }
    Ok(Some(st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::flow::evaluate_flows;

    #[test]
    fn e1_starts_at_the_cheap_node() {
        let s = fixtures::e1();
        assert_eq!(linearized_placement_costs(&s, 0), vec![10.5, 2.5, 11.0]);
        let st = initial_strategy(&s).unwrap();
        let opt = fixtures::e1_optimal_strategy(&s);
        assert_eq!(st.tasks[0].data[..2], opt.tasks[0].data[..2]);
        assert_eq!(st.tasks[0].result, opt.tasks[0].result);
        assert_eq!(evaluate_flows(&s, &st).unwrap().cost, 2.5);
    }

    #[test]
    fn e0_computes_locally() {
        let s = fixtures::e0();
        let st = initial_strategy(&s).unwrap();
        assert_eq!(evaluate_flows(&s, &st).unwrap().cost, 10.0);
    }

    #[test]
    fn overload_everywhere_is_rejected() {
        let mut s = fixtures::e1();
        for c in &mut s.compute {
            c.kind = crate::model::ComputeKind::SumQueue;
            c.s = 1.0;
            c.c = vec![1.0];
        }
        s.tasks[0].rates = vec![5.0, 0.0, 0.0];
        assert!(matches!(initial_strategy(&s), Err(Error::NoFeasibleStart(_))));
    }

    #[test]
    fn spreading_rescues_a_single_overloaded_node() {
        // Each node can absorb a load below 1, three of them together 1.5.
        let mut s = fixtures::e1();
        for c in &mut s.compute {
            c.kind = crate::model::ComputeKind::SumQueue;
            c.s = 0.9;
            c.c = vec![1.0];
        }
        s.tasks[0].rates = vec![1.5, 0.0, 0.0];
        let st = initial_strategy(&s).unwrap();
        assert!(evaluate_flows(&s, &st).unwrap().feasible);
    }
}
