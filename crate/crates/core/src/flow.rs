//! Flows induced by a strategy: traffic, link flows, computation loads and
//! total cost.

use crate::error::{Error, Result};
use crate::model::{Evaluated, LinkEval, Scenario};
use crate::strategy::{FlowClass, Strategy};

/// Flows of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFlows {
    /// Total data traffic entering each node (forwarded in plus injected).
    pub t_data: Vec<f64>,
    /// Total result traffic at each node (forwarded in plus generated).
    pub t_result: Vec<f64>,
    /// Data rate computed at each node.
    pub g: Vec<f64>,
    /// Data flow on each link.
    pub f_data: Vec<f64>,
    /// Result flow on each link.
    pub f_result: Vec<f64>,
}

impl TaskFlows {
    fn zeros(n: usize, l: usize) -> Self {
        TaskFlows {
            t_data: vec![0.0; n],
            t_result: vec![0.0; n],
            g: vec![0.0; n],
            f_data: vec![0.0; l],
            f_result: vec![0.0; l],
        }
    }

    pub fn traffic(&self, class: FlowClass) -> &[f64] {
        match class {
            FlowClass::Data => &self.t_data,
            FlowClass::Result => &self.t_result,
        }
    }
}

/// Everything induced by a (scenario, strategy) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub tasks: Vec<TaskFlows>,
    /// Total flow `F` on each link.
    pub link_flow: Vec<f64>,
    /// Per-type computation load `g^m` at each node.
    pub comp_load: Vec<Vec<f64>>,
    /// Link cost and derivatives; all `+inf` on links at or beyond capacity.
    pub link_eval: Vec<LinkEval>,
    /// Computation cost per node; `+inf` when at or beyond capacity.
    pub comp_cost: Vec<f64>,
    /// Gradient of each node's computation cost (meaningless when infeasible).
    pub comp_grad: Vec<Vec<f64>>,
    /// Total cost `D`; `+inf` when infeasible.
    pub cost: f64,
    pub feasible: bool,
    /// Topological order of each task's positive data subgraph.
    pub data_order: Vec<Vec<usize>>,
    /// Topological order of each task's positive result subgraph.
    pub result_order: Vec<Vec<usize>>,
}

impl FlowState {
    pub fn total_cost(&self) -> Evaluated<f64> {
        total_cost(self)
    }

    pub fn link_derivative(&self, link: usize) -> f64 {
        self.link_eval[link].first
    }
}

/// Total cost with the infeasible marker when any cost function is at capacity.
pub fn total_cost(flows: &FlowState) -> Evaluated<f64> {
    if flows.feasible {
        Evaluated::Finite(flows.cost)
    } else {
        Evaluated::Infeasible
    }
}

/// Exogenous traffic added on top of the scenario's input rates; used by the
/// finite-difference marginal oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub task: usize,
    pub node: usize,
    pub class: FlowClass,
    pub amount: f64,
}

pub fn evaluate_flows(scenario: &Scenario, strategy: &Strategy) -> Result<FlowState> {
    evaluate_flows_injected(scenario, strategy, &[])
}

/// Computes one task's flows by sweeping its positive data subgraph and then
/// its positive result subgraph in topological order.
pub(crate) fn sweep_task(
    scenario: &Scenario,
    strategy: &Strategy,
    k: usize,
    injections: &[Injection],
) -> Result<(TaskFlows, Vec<usize>, Vec<usize>)> {
    let net = &scenario.network;
    let task = &scenario.tasks[k];
    let ts = &strategy.tasks[k];
    let mut tf = TaskFlows::zeros(net.num_nodes(), net.num_links());
    let loop_err = |class, cycle| Error::LoopDetected { task: k, class, cycle };

    let data_order = strategy
        .topological_order(net, k, FlowClass::Data)
        .map_err(|c| loop_err(FlowClass::Data, c))?;
    tf.t_data.copy_from_slice(&task.rates);
    for inj in injections.iter().filter(|x| x.task == k) {
        match inj.class {
            FlowClass::Data => tf.t_data[inj.node] += inj.amount,
            FlowClass::Result => tf.t_result[inj.node] += inj.amount,
        }
    }
    for &u in &data_order {
        let t = tf.t_data[u];
        if t == 0.0 {
            continue;
        }
        let row = &ts.data[u];
        tf.g[u] = t * row[0];
        for (p, a) in net.out(u).iter().enumerate() {
            let phi = row[1 + p];
            if phi > 0.0 {
                let f = t * phi;
                tf.f_data[a.link] = f;
                tf.t_data[a.node] += f;
            }
        }
    }

    let result_order = strategy
        .topological_order(net, k, FlowClass::Result)
        .map_err(|c| loop_err(FlowClass::Result, c))?;
    for i in 0..net.num_nodes() {
        tf.t_result[i] += task.a * tf.g[i];
    }
    for &u in &result_order {
        let t = tf.t_result[u];
        if t == 0.0 || u == task.dest {
            continue;
        }
        let row = &ts.result[u];
        for (p, a) in net.out(u).iter().enumerate() {
            let phi = row[p];
            if phi > 0.0 {
                let f = t * phi;
                tf.f_result[a.link] = f;
                tf.t_result[a.node] += f;
            }
        }
    }
    Ok((tf, data_order, result_order))
}

pub fn evaluate_flows_injected(
    scenario: &Scenario,
    strategy: &Strategy,
    injections: &[Injection],
) -> Result<FlowState> {
    let net = &scenario.network;
    let n = net.num_nodes();
    let nl = net.num_links();
    let mt = scenario.num_types();
    debug_assert_eq!(strategy.tasks.len(), scenario.num_tasks());

    let mut tasks = Vec::with_capacity(scenario.num_tasks());
    let mut data_order = Vec::with_capacity(scenario.num_tasks());
    let mut result_order = Vec::with_capacity(scenario.num_tasks());
    let mut link_flow = vec![0.0; nl];
    let mut comp_load = vec![vec![0.0; mt]; n];
    for k in 0..scenario.num_tasks() {
        let (tf, dord, rord) = sweep_task(scenario, strategy, k, injections)?;
        for l in 0..nl {
            link_flow[l] += tf.f_data[l] + tf.f_result[l];
        }
        let m = scenario.tasks[k].m;
        for i in 0..n {
            comp_load[i][m] += tf.g[i];
        }
        tasks.push(tf);
        data_order.push(dord);
        result_order.push(rord);
    }

    let mut feasible = true;
    let mut cost = 0.0;
    let mut link_eval = Vec::with_capacity(nl);
    for (l, lc) in scenario.link_costs.iter().enumerate() {
        match lc.eval(link_flow[l])? {
            Evaluated::Finite(e) => {
                cost += e.cost;
                link_eval.push(e);
            }
            Evaluated::Infeasible => {
                feasible = false;
                link_eval.push(LinkEval {
                    cost: f64::INFINITY,
                    first: f64::INFINITY,
                    second: f64::INFINITY,
                });
            }
        }
    }
    let mut comp_cost = Vec::with_capacity(n);
    let mut comp_grad = vec![vec![0.0; mt]; n];
    for i in 0..n {
        match scenario.compute[i].eval_into(&comp_load[i], &mut comp_grad[i])? {
            Evaluated::Finite(c) => {
                cost += c;
                comp_cost.push(c);
            }
            Evaluated::Infeasible => {
                feasible = false;
                comp_cost.push(f64::INFINITY);
                comp_grad[i].iter_mut().for_each(|g| *g = f64::INFINITY);
            }
        }
    }
    if !feasible {
        cost = f64::INFINITY;
    }
    Ok(FlowState {
        tasks,
        link_flow,
        comp_load,
        link_eval,
        comp_cost,
        comp_grad,
        cost,
        feasible,
        data_order,
        result_order,
    })
}

/// Largest absolute violation of the data and result conservation laws
/// (traffic equals inflow plus injection, and is fully computed or forwarded).
pub fn conservation_residual(scenario: &Scenario, flows: &FlowState) -> f64 {
    let net = &scenario.network;
    let mut worst: f64 = 0.0;
    for (task, tf) in scenario.tasks.iter().zip(&flows.tasks) {
        for i in 0..net.num_nodes() {
            let in_d: f64 = net.inc(i).iter().map(|a| tf.f_data[a.link]).sum();
            let in_r: f64 = net.inc(i).iter().map(|a| tf.f_result[a.link]).sum();
            let out_d: f64 = net.out(i).iter().map(|a| tf.f_data[a.link]).sum();
            let out_r: f64 = net.out(i).iter().map(|a| tf.f_result[a.link]).sum();
            worst = worst.max((tf.t_data[i] - in_d - task.rates[i]).abs());
            worst = worst.max((tf.t_result[i] - in_r - task.a * tf.g[i]).abs());
            worst = worst.max((tf.t_data[i] - out_d - tf.g[i]).abs());
            if i == task.dest {
                worst = worst.max(out_r.abs());
            } else {
                worst = worst.max((tf.t_result[i] - out_r).abs());
            }
        }
    }
    for (l, &f) in flows.link_flow.iter().enumerate() {
        let sum: f64 = flows.tasks.iter().map(|t| t.f_data[l] + t.f_result[l]).sum();
        worst = worst.max((f - sum).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn e1_compute_at_2() {
        let s = fixtures::e1();
        let st = fixtures::e1_optimal_strategy(&s);
        let fs = evaluate_flows(&s, &st).unwrap();
        let net = &s.network;
        let l12 = net.find_link(0, 1).unwrap();
        let l23 = net.find_link(1, 2).unwrap();
        let tf = &fs.tasks[0];
        assert!(close(tf.f_data[l12], 1.0));
        assert!(close(tf.g[1], 1.0));
        assert!(close(tf.f_result[l23], 0.5));
        assert!(close(fs.link_flow[l12], 1.0));
        assert!(close(fs.link_flow[l23], 0.5));
        assert_eq!(total_cost(&fs), Evaluated::Finite(2.5));
        assert!(conservation_residual(&s, &fs) < 1e-12);
    }

    #[test]
    fn e1_half_split() {
        let s = fixtures::e1();
        let net = &s.network;
        let mut st = fixtures::e1_optimal_strategy(&s);
        st.tasks[0].data[0] = vec![0.0; 3];
        st.tasks[0].data[0][0] = 0.5;
        st.tasks[0].data[0][1 + crate::strategy::position(net, 0, 1).unwrap()] = 0.5;
        st.set_result_next(net, 0, 0, Some(2));
        st.set_result_next(net, 0, 1, Some(2));
        let fs = evaluate_flows(&s, &st).unwrap();
        let tf = &fs.tasks[0];
        assert!(close(tf.g[0], 0.5) && close(tf.g[1], 0.5));
        assert!(close(tf.f_result[net.find_link(0, 2).unwrap()], 0.25));
        assert!(close(tf.f_result[net.find_link(1, 2).unwrap()], 0.25));
        assert!(close(fs.cost, 6.5));
    }

    #[test]
    fn zero_input_gives_zero_state() {
        let mut s = fixtures::e1();
        s.tasks[0].rates = vec![0.0; 3];
        let st = fixtures::e1_optimal_strategy(&s);
        let fs = evaluate_flows(&s, &st).unwrap();
        assert_eq!(fs.cost, 0.0);
        assert!(fs.link_flow.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn queue_link_at_capacity_is_infeasible() {
        let mut s = fixtures::e1();
        let l12 = s.network.find_link(0, 1).unwrap();
        s.link_costs[l12] = crate::model::LinkCost::Queue(1.0);
        let st = fixtures::e1_optimal_strategy(&s);
        let fs = evaluate_flows(&s, &st).unwrap();
        assert!(!fs.feasible);
        assert_eq!(total_cost(&fs), Evaluated::Infeasible);
    }

    #[test]
    fn loop_is_an_error() {
        let s = fixtures::e1();
        let mut st = fixtures::e1_optimal_strategy(&s);
        st.set_data_next(&s.network, 0, 1, Some(0));
        match evaluate_flows(&s, &st) {
            Err(Error::LoopDetected { class, cycle, .. }) => {
                assert_eq!(class, FlowClass::Data);
                assert_eq!(cycle, vec![0, 1, 0]);
            }
            other => panic!("expected loop error, got {other:?}"),
        }
    }
}
