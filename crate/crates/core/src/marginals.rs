//! Marginal costs, augmented marginals and the optimality-condition checks.

use std::io::Write;

use crate::error::{Error, Result};
use crate::flow::{evaluate_flows, evaluate_flows_injected, FlowState, Injection};
use crate::model::Scenario;
use crate::strategy::{FlowClass, Strategy, SIMPLEX_TOL};

/// Marginals of one task. Rows have the same shape as the strategy rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMarginals {
    pub dest: usize,
    /// `dD/dr_i`: cost of one more unit of input data injected at node i.
    pub pr: Vec<f64>,
    /// `dD/dt+_i`: cost of one more unit of result injected at node i.
    pub pt: Vec<f64>,
    /// Augmented data marginals: option 0 computes, option `1+p` forwards to
    /// the p-th out-neighbor.
    pub delta_data: Vec<Vec<f64>>,
    /// Augmented result marginals, one per out-neighbor.
    pub delta_result: Vec<Vec<f64>>,
    /// `dD/dphi-` (traffic times augmented marginal).
    pub grad_data: Vec<Vec<f64>>,
    /// `dD/dphi+`.
    pub grad_result: Vec<Vec<f64>>,
}

impl TaskMarginals {
    pub fn node_marginal(&self, class: FlowClass) -> &[f64] {
        match class {
            FlowClass::Data => &self.pr,
            FlowClass::Result => &self.pt,
        }
    }

    pub fn delta(&self, class: FlowClass) -> &[Vec<f64>] {
        match class {
            FlowClass::Data => &self.delta_data,
            FlowClass::Result => &self.delta_result,
        }
    }

    pub fn grad(&self, class: FlowClass) -> &[Vec<f64>] {
        match class {
            FlowClass::Data => &self.grad_data,
            FlowClass::Result => &self.grad_result,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalState {
    pub tasks: Vec<TaskMarginals>,
}

/// Evaluates the marginal recursions: result marginals over the reverse
/// topological order of each result subgraph, then data marginals over the
/// reverse order of the data subgraph.
pub fn compute_marginals(
    scenario: &Scenario,
    strategy: &Strategy,
    flows: &FlowState,
) -> Result<MarginalState> {
    if !flows.feasible {
        return Err(Error::InfeasibleState);
    }
    let net = &scenario.network;
    let n = net.num_nodes();
    let mut tasks = Vec::with_capacity(scenario.num_tasks());
    for (k, task) in scenario.tasks.iter().enumerate() {
        let ts = &strategy.tasks[k];
        let tf = &flows.tasks[k];
        let result_order = strategy
            .topological_order(net, k, FlowClass::Result)
            .map_err(|cycle| Error::LoopDetected { task: k, class: FlowClass::Result, cycle })?;
        let data_order = strategy
            .topological_order(net, k, FlowClass::Data)
            .map_err(|cycle| Error::LoopDetected { task: k, class: FlowClass::Data, cycle })?;

        let mut pt = vec![0.0; n];
        for &u in result_order.iter().rev() {
            if u == task.dest {
                continue;
            }
            let row = &ts.result[u];
            let mut acc = 0.0;
            for (p, a) in net.out(u).iter().enumerate() {
                if row[p] > 0.0 {
                    acc += row[p] * (flows.link_eval[a.link].first + pt[a.node]);
                }
            }
            pt[u] = acc;
        }

        let mut pr = vec![0.0; n];
        for &u in data_order.iter().rev() {
            let row = &ts.data[u];
            let mut acc = 0.0;
            if row[0] > 0.0 {
                acc += row[0] * (flows.comp_grad[u][task.m] + task.a * pt[u]);
            }
            for (p, a) in net.out(u).iter().enumerate() {
                if row[1 + p] > 0.0 {
                    acc += row[1 + p] * (flows.link_eval[a.link].first + pr[a.node]);
                }
            }
            pr[u] = acc;
        }

        let mut delta_data = Vec::with_capacity(n);
        let mut delta_result = Vec::with_capacity(n);
        let mut grad_data = Vec::with_capacity(n);
        let mut grad_result = Vec::with_capacity(n);
        for u in 0..n {
            let mut dd = Vec::with_capacity(1 + net.out(u).len());
            dd.push(flows.comp_grad[u][task.m] + task.a * pt[u]);
            let mut dr = Vec::with_capacity(net.out(u).len());
            for a in net.out(u) {
                let d1 = flows.link_eval[a.link].first;
                dd.push(d1 + pr[a.node]);
                if u != task.dest {
                    dr.push(d1 + pt[a.node]);
                }
            }
            if u == task.dest {
                // The destination is a sink: its result row has no options
                // that matter, but keep the shape of the strategy row.
                dr = vec![0.0; net.out(u).len()];
            }
            grad_data.push(dd.iter().map(|d| tf.t_data[u] * d).collect());
            grad_result.push(dr.iter().map(|d| tf.t_result[u] * d).collect());
            delta_data.push(dd);
            delta_result.push(dr);
        }
        tasks.push(TaskMarginals {
            dest: task.dest,
            pr,
            pt,
            delta_data,
            delta_result,
            grad_data,
            grad_result,
        });
    }
    Ok(MarginalState { tasks })
}

/// Flow and marginal evaluation in one call.
pub fn evaluate_all(scenario: &Scenario, strategy: &Strategy) -> Result<(FlowState, MarginalState)> {
    let flows = evaluate_flows(scenario, strategy)?;
    let marginals = compute_marginals(scenario, strategy, &flows)?;
    Ok((flows, marginals))
}

/// Which exogenous rate a finite difference perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// Input data rate `r_i`.
    Input,
    /// Result injected at node i.
    Result,
}

/// Finite-difference estimate of `dD/dr_i` or `dD/dt+_i`: a central
/// difference where the node carries at least `eps` of traffic, and a
/// second-order forward difference otherwise (a negative injection would
/// make flows negative).
pub fn finite_difference_marginal(
    scenario: &Scenario,
    strategy: &Strategy,
    node: usize,
    task: usize,
    which: Perturbation,
    eps: f64,
) -> Result<f64> {
    let class = match which {
        Perturbation::Input => FlowClass::Data,
        Perturbation::Result => FlowClass::Result,
    };
    let cost_at = |amount: f64| -> Result<f64> {
        let fs = evaluate_flows_injected(
            scenario,
            strategy,
            &[Injection { task, node, class, amount }],
        )?;
        if fs.feasible {
            Ok(fs.cost)
        } else {
            Err(Error::InfeasibleState)
        }
    };
    let base = evaluate_flows(scenario, strategy)?;
    if !base.feasible {
        return Err(Error::InfeasibleState);
    }
    let traffic = base.tasks[task].traffic(class)[node];
    if traffic >= eps {
        Ok((cost_at(eps)? - cost_at(-eps)?) / (2.0 * eps))
    } else {
        let d0 = base.cost;
        Ok((-3.0 * d0 + 4.0 * cost_at(eps)? - cost_at(2.0 * eps)?) / (2.0 * eps))
    }
}

/// Per-row rule restricting which options an optimizer may use; shared by the
/// optimality checks so restricted problems are judged on their own terms.
#[derive(Debug, Clone, PartialEq)]
pub enum RowRule {
    Free,
    /// The row is fixed and excluded from optimization and gap checks.
    Frozen,
    /// Only options marked `true` may carry mass.
    Allowed(Vec<bool>),
}

/// Row rules for every task, node and class.
#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    pub data: Vec<Vec<RowRule>>,
    pub result: Vec<Vec<RowRule>>,
}

impl Restriction {
    pub fn free(scenario: &Scenario) -> Self {
        let n = scenario.num_nodes();
        let k = scenario.num_tasks();
        Restriction {
            data: vec![vec![RowRule::Free; n]; k],
            result: vec![vec![RowRule::Free; n]; k],
        }
    }

    pub fn rule(&self, task: usize, node: usize, class: FlowClass) -> &RowRule {
        match class {
            FlowClass::Data => &self.data[task][node],
            FlowClass::Result => &self.result[task][node],
        }
    }

    pub fn set(&mut self, task: usize, node: usize, class: FlowClass, rule: RowRule) {
        match class {
            FlowClass::Data => self.data[task][node] = rule,
            FlowClass::Result => self.result[task][node] = rule,
        }
    }
}

fn check_row(row: &[f64], must_be_empty: bool) -> Result<()> {
    let sum: f64 = row.iter().sum();
    let target = if must_be_empty { 0.0 } else { 1.0 };
    if row.iter().any(|&x| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&x))
        || (sum - target).abs() > SIMPLEX_TOL
    {
        return Err(Error::InvalidStrategy(format!(
            "row {row:?} is not on the simplex (sum {sum})"
        )));
    }
    Ok(())
}

fn row_gap(values: &[f64], phi: &[f64], allowed: Option<&[bool]>) -> f64 {
    let ok = |j: usize| allowed.is_none_or(|a| a[j]);
    let min = (0..values.len())
        .filter(|&j| ok(j))
        .map(|j| values[j])
        .fold(f64::INFINITY, f64::min);
    (0..values.len())
        .filter(|&j| phi[j] > 0.0)
        .map(|j| values[j] - min)
        .fold(0.0, f64::max)
}

fn condition_gap(
    marginals: &MarginalState,
    strategy: &Strategy,
    restriction: Option<&Restriction>,
    use_grad: bool,
) -> Result<f64> {
    let mut gap: f64 = 0.0;
    for (k, tm) in marginals.tasks.iter().enumerate() {
        let ts = strategy
            .tasks
            .get(k)
            .ok_or_else(|| Error::InvalidStrategy(format!("strategy lacks task {k}")))?;
        for class in [FlowClass::Data, FlowClass::Result] {
            let values = if use_grad { tm.grad(class) } else { tm.delta(class) };
            let rows = match class {
                FlowClass::Data => &ts.data,
                FlowClass::Result => &ts.result,
            };
            if rows.len() != values.len() {
                return Err(Error::Shape { expected: values.len(), got: rows.len() });
            }
            for (i, phi) in rows.iter().enumerate() {
                let sink = class == FlowClass::Result && i == tm.dest;
                check_row(phi, sink)?;
                if sink {
                    continue;
                }
                let rule = restriction.map_or(&RowRule::Free, |r| r.rule(k, i, class));
                let g = match rule {
                    RowRule::Frozen => 0.0,
                    RowRule::Free => row_gap(&values[i], phi, None),
                    RowRule::Allowed(mask) => row_gap(&values[i], phi, Some(mask)),
                };
                gap = gap.max(g);
            }
        }
    }
    Ok(gap)
}

/// Largest excess of `dD/dphi` on a positive option over the row minimum.
/// Zero exactly when the necessary (first-order) condition holds; rows without
/// traffic never contribute.
pub fn check_lemma1_gap(marginals: &MarginalState, strategy: &Strategy) -> Result<f64> {
    condition_gap(marginals, strategy, None, true)
}

/// Largest excess of an augmented marginal on a positive option over the row
/// minimum, over all rows including those without traffic. Zero certifies
/// global optimality of a feasible loop-free strategy.
pub fn check_theorem1_gap(marginals: &MarginalState, strategy: &Strategy) -> Result<f64> {
    condition_gap(marginals, strategy, None, false)
}

pub fn lemma1_gap_restricted(
    marginals: &MarginalState,
    strategy: &Strategy,
    restriction: Option<&Restriction>,
) -> Result<f64> {
    condition_gap(marginals, strategy, restriction, true)
}

pub fn theorem1_gap_restricted(
    marginals: &MarginalState,
    strategy: &Strategy,
    restriction: Option<&Restriction>,
) -> Result<f64> {
    condition_gap(marginals, strategy, restriction, false)
}

/// Returns `(sum r * dD/dr, sum D' F + sum dC/dg g)`; the two agree for every
/// feasible loop-free strategy.
pub fn cost_identity(scenario: &Scenario, flows: &FlowState, marginals: &MarginalState) -> (f64, f64) {
    let lhs: f64 = scenario
        .tasks
        .iter()
        .zip(&marginals.tasks)
        .map(|(t, m)| t.rates.iter().zip(&m.pr).map(|(r, p)| r * p).sum::<f64>())
        .sum();
    let links: f64 = flows
        .link_flow
        .iter()
        .zip(&flows.link_eval)
        .map(|(f, e)| if *f > 0.0 { e.first * f } else { 0.0 })
        .sum();
    let comp: f64 = flows
        .comp_load
        .iter()
        .zip(&flows.comp_grad)
        .map(|(g, d)| g.iter().zip(d).map(|(g, d)| if *g > 0.0 { g * d } else { 0.0 }).sum::<f64>())
        .sum();
    (lhs, links + comp)
}

/// Writes one CSV line per (task, node, option):
/// `task,node,option,phi,delta,dDdphi`. Data options are `data:local` or
/// `data:<neighbor>`, result options `result:<neighbor>`.
pub fn write_diagnostics<W: Write>(
    mut out: W,
    scenario: &Scenario,
    strategy: &Strategy,
    marginals: &MarginalState,
) -> std::io::Result<()> {
    let net = &scenario.network;
    writeln!(out, "task,node,option,phi,delta,dDdphi")?;
    for (k, tm) in marginals.tasks.iter().enumerate() {
        for i in 0..net.num_nodes() {
            let row = &strategy.tasks[k].data[i];
            for (j, &phi) in row.iter().enumerate() {
                let opt = if j == 0 {
                    "data:local".to_string()
                } else {
                    format!("data:{}", net.out(i)[j - 1].node)
                };
                writeln!(
                    out,
                    "{k},{i},{opt},{phi},{},{}",
                    tm.delta_data[i][j], tm.grad_data[i][j]
                )?;
            }
            if i == tm.dest {
                continue;
            }
            for (p, &phi) in strategy.tasks[k].result[i].iter().enumerate() {
                writeln!(
                    out,
                    "{k},{i},result:{},{phi},{},{}",
                    net.out(i)[p].node,
                    tm.delta_result[i][p],
                    tm.grad_result[i][p]
                )?;
            }
        }
    }
    Ok(())
}
