//! Optimality oracles: Frank-Wolfe on the flow formulation, which yields a
//! certified lower bound, and exhaustive grid search for tiny instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::evaluate_flows;
use crate::init::initial_strategy;
use crate::model::{Evaluated, Scenario};
use crate::paths::{reverse_dijkstra, shortest_to};
use crate::strategy::{FlowClass, Strategy};

/// Flows of one task in the flow formulation (no forwarding fractions).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFlowVars {
    pub f_data: Vec<f64>,
    pub f_result: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowVariables {
    pub tasks: Vec<TaskFlowVars>,
}

impl FlowVariables {
    pub fn from_strategy(scenario: &Scenario, strategy: &Strategy) -> Result<Self> {
        let fs = evaluate_flows(scenario, strategy)?;
        Ok(FlowVariables {
            tasks: fs
                .tasks
                .into_iter()
                .map(|t| TaskFlowVars { f_data: t.f_data, f_result: t.f_result, g: t.g })
                .collect(),
        })
    }

    /// Largest violation of flow conservation or non-negativity.
    pub fn conservation_residual(&self, scenario: &Scenario) -> f64 {
        let net = &scenario.network;
        let mut worst: f64 = 0.0;
        for (task, tv) in scenario.tasks.iter().zip(&self.tasks) {
            for i in 0..net.num_nodes() {
                let in_d: f64 = net.inc(i).iter().map(|a| tv.f_data[a.link]).sum();
                let out_d: f64 = net.out(i).iter().map(|a| tv.f_data[a.link]).sum();
                let in_r: f64 = net.inc(i).iter().map(|a| tv.f_result[a.link]).sum();
                let out_r: f64 = net.out(i).iter().map(|a| tv.f_result[a.link]).sum();
                worst = worst.max((task.rates[i] + in_d - out_d - tv.g[i]).abs());
                if i == task.dest {
                    worst = worst.max(out_r.abs());
                } else {
                    worst = worst.max((out_r - task.a * tv.g[i] - in_r).abs());
                }
                worst = worst.max(-tv.g[i]);
            }
            for l in 0..net.num_links() {
                worst = worst.max(-tv.f_data[l]).max(-tv.f_result[l]);
            }
        }
        worst
    }

    fn aggregates(&self, scenario: &Scenario) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut f = vec![0.0; scenario.num_links()];
        let mut g = vec![vec![0.0; scenario.num_types()]; scenario.num_nodes()];
        for (task, tv) in scenario.tasks.iter().zip(&self.tasks) {
            for l in 0..f.len() {
                f[l] += tv.f_data[l] + tv.f_result[l];
            }
            for (i, gi) in g.iter_mut().enumerate() {
                gi[task.m] += tv.g[i];
            }
        }
        (f, g)
    }
}

fn aggregate_cost(scenario: &Scenario, f: &[f64], g: &[Vec<f64>], grad: &mut [f64]) -> Result<f64> {
    let mut total = 0.0;
    for (c, &x) in scenario.link_costs.iter().zip(f) {
        match c.eval(x.max(0.0))? {
            Evaluated::Finite(e) => total += e.cost,
            Evaluated::Infeasible => return Ok(f64::INFINITY),
        }
    }
    for (c, gi) in scenario.compute.iter().zip(g) {
        match c.eval_into(gi, grad)? {
            Evaluated::Finite(v) => total += v,
            Evaluated::Infeasible => return Ok(f64::INFINITY),
        }
    }
    Ok(total)
}

/// Certificate emitted by the Frank-Wolfe oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// No feasible flow costs less than this.
    pub lower_bound: f64,
    /// Cost of the best flow found.
    pub upper_bound: f64,
    pub iterations: usize,
    /// `upper_bound - lower_bound`.
    pub gap: f64,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwResult {
    pub certificate: Certificate,
    pub flows: FlowVariables,
    pub converged: bool,
    /// Certified gap after each iteration.
    pub gap_history: Vec<f64>,
}

/// Minimizes a convex function on `[0, 1]` by golden-section search.
fn golden_section(mut f: impl FnMut(f64) -> Result<f64>, tol: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    // Compare the bracket midpoint with the endpoints, which golden-section
    // never evaluates but where linear pieces put the minimum.
    let mid = 0.5 * (a + b);
    let mut best = (f(mid)?, mid);
    for x in [0.0, 1.0] {
        let v = f(x)?;
        if v < best.0 {
            best = (v, x);
        }
    }
    Ok(best.1)
}

/// Frank-Wolfe on the flow formulation starting from the flows of
/// [`initial_strategy`]. The linearized subproblem of each task is a shortest
/// path through a layered graph: data links, a computation arc with the
/// computation marginal, then `a` times the result shortest path. Stops when
/// the certified gap is at most `tolerance * (1 + upper bound)`.
pub fn fw_solve(scenario: &Scenario, tolerance: f64, max_iters: usize) -> Result<FwResult> {
    let start = initial_strategy(scenario)?;
    fw_solve_from(scenario, &FlowVariables::from_strategy(scenario, &start)?, tolerance, max_iters)
}

pub fn fw_solve_from(
    scenario: &Scenario,
    start: &FlowVariables,
    tolerance: f64,
    max_iters: usize,
) -> Result<FwResult> {
    let net = &scenario.network;
    let nl = net.num_links();
    let n = net.num_nodes();
    let mt = scenario.num_types();
    let mut x = start.clone();
    let mut lower = f64::NEG_INFINITY;
    let mut gap_history = Vec::new();
    let mut scratch = vec![0.0; mt];
    let mut iterations = 0;
    let mut converged = false;
    let mut upper;
    loop {
        let (f, g) = x.aggregates(scenario);
        let mut d1 = Vec::with_capacity(nl);
        upper = 0.0;
        for (c, &fl) in scenario.link_costs.iter().zip(&f) {
            match c.eval(fl.max(0.0))? {
                Evaluated::Finite(e) => {
                    upper += e.cost;
                    d1.push(e.first);
                }
                Evaluated::Infeasible => return Err(Error::InfeasibleState),
            }
        }
        let mut cgrad = vec![vec![0.0; mt]; n];
        for i in 0..n {
            match scenario.compute[i].eval_into(&g[i], &mut cgrad[i])? {
                Evaluated::Finite(v) => upper += v,
                Evaluated::Infeasible => return Err(Error::InfeasibleState),
            }
        }

        // Linear minimization oracle.
        let mut y = FlowVariables {
            tasks: vec![
                TaskFlowVars { f_data: vec![0.0; nl], f_result: vec![0.0; nl], g: vec![0.0; n] };
                scenario.num_tasks()
            ],
        };
        let mut linear_opt = 0.0;
        for (k, task) in scenario.tasks.iter().enumerate() {
            let res = shortest_to(net, task.dest, &d1);
            let init: Vec<f64> = (0..n).map(|v| cgrad[v][task.m] + task.a * res.dist[v]).collect();
            let lab = reverse_dijkstra(net, &init, &d1);
            let yt = &mut y.tasks[k];
            for i in task.sources() {
                let r = task.rates[i];
                linear_opt += r * lab.dist[i];
                let mut u = i;
                while let Some(v) = lab.next[u] {
                    yt.f_data[net.find_link(u, v).expect("path link")] += r;
                    u = v;
                }
                yt.g[u] += r;
                let mut w = u;
                while let Some(v) = res.next[w] {
                    yt.f_result[net.find_link(w, v).expect("path link")] += task.a * r;
                    w = v;
                }
            }
        }
        let mut linear_cur = 0.0;
        for l in 0..nl {
            if f[l] > 0.0 {
                linear_cur += d1[l] * f[l];
            }
        }
        for i in 0..n {
            for m in 0..mt {
                if g[i][m] > 0.0 {
                    linear_cur += cgrad[i][m] * g[i][m];
                }
            }
        }
        let fw_gap = (linear_cur - linear_opt).max(0.0);
        lower = lower.max(upper - fw_gap);
        let certified = upper - lower;
        gap_history.push(certified);
        if certified <= tolerance * (1.0 + upper.abs()) {
            converged = true;
            break;
        }
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        let (fy, gy) = y.aggregates(scenario);
        let mu = golden_section(
            |mu| {
                let fm: Vec<f64> = f.iter().zip(&fy).map(|(a, b)| a + mu * (b - a)).collect();
                let gm: Vec<Vec<f64>> = g
                    .iter()
                    .zip(&gy)
                    .map(|(ga, gb)| ga.iter().zip(gb).map(|(a, b)| a + mu * (b - a)).collect())
                    .collect();
                aggregate_cost(scenario, &fm, &gm, &mut scratch)
            },
            1e-10,
        )?;
        if mu == 0.0 {
            // No progress possible along the Frank-Wolfe direction.
            break;
        }
        for (xt, yt) in x.tasks.iter_mut().zip(&y.tasks) {
            for l in 0..nl {
                xt.f_data[l] += mu * (yt.f_data[l] - xt.f_data[l]);
                xt.f_result[l] += mu * (yt.f_result[l] - xt.f_result[l]);
            }
            for i in 0..n {
                xt.g[i] += mu * (yt.g[i] - xt.g[i]);
            }
        }
    }
    Ok(FwResult {
        certificate: Certificate {
            lower_bound: lower,
            upper_bound: upper,
            iterations,
            gap: upper - lower,
        },
        flows: x,
        converged,
        gap_history,
    })
}

/// Largest number of strategy evaluations [`brute_force_small`] performs.
pub const BRUTE_FORCE_BUDGET: u64 = 200_000_000;

/// Grid points of the simplex over `k` options with step `1/steps`.
fn simplex_grid(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == k {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for c in (0..=left).rev() {
            cur.push(c);
            rec(k, left - c, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

struct Search<'a> {
    scenario: &'a Scenario,
    grids: Vec<[Vec<Vec<f64>>; 2]>,
    canonical: Vec<Vec<Option<usize>>>,
    strategy: Strategy,
    traffic: Vec<[Vec<f64>; 2]>,
    g: Vec<Vec<f64>>,
    best: Option<(f64, Strategy)>,
    evaluations: u64,
    budget: u64,
    scratch: Vec<f64>,
    loads: Vec<Vec<f64>>,
    link_flow: Vec<f64>,
}

fn class_index(c: FlowClass) -> usize {
    match c {
        FlowClass::Data => 0,
        FlowClass::Result => 1,
    }
}

impl Search<'_> {
    /// True when some positive path leads from `from` to `to`.
    fn reaches(&self, k: usize, class: FlowClass, assigned: &[bool], from: usize, to: usize) -> bool {
        let net = &self.scenario.network;
        let off = class.link_offset();
        let mut stack = vec![from];
        let mut seen = vec![false; net.num_nodes()];
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            if seen[u] || !assigned[u] {
                continue;
            }
            seen[u] = true;
            let row = self.strategy.row(k, u, class);
            for (p, a) in net.out(u).iter().enumerate() {
                if row[off + p] > 0.0 {
                    stack.push(a.node);
                }
            }
        }
        false
    }

    fn seeds(&self, k: usize, class: FlowClass) -> Vec<bool> {
        let task = &self.scenario.tasks[k];
        (0..self.scenario.num_nodes())
            .map(|i| match class {
                FlowClass::Data => task.rates[i] > 0.0,
                FlowClass::Result => self.g[k][i] > 0.0 && i != task.dest,
            })
            .collect()
    }

    /// Unassigned node receiving traffic from the seeds through assigned rows.
    fn frontier(&self, k: usize, class: FlowClass, assigned: &[bool]) -> Option<usize> {
        let net = &self.scenario.network;
        let off = class.link_offset();
        let seeds = self.seeds(k, class);
        let mut stack: Vec<usize> = (0..net.num_nodes()).filter(|&i| seeds[i]).collect();
        let mut seen = vec![false; net.num_nodes()];
        let mut found: Option<usize> = None;
        while let Some(u) = stack.pop() {
            if seen[u] {
                continue;
            }
            seen[u] = true;
            if class == FlowClass::Result && u == self.scenario.tasks[k].dest {
                continue;
            }
            if !assigned[u] {
                found = Some(found.map_or(u, |f: usize| f.min(u)));
                continue;
            }
            let row = self.strategy.row(k, u, class);
            for (p, a) in net.out(u).iter().enumerate() {
                if row[off + p] > 0.0 {
                    stack.push(a.node);
                }
            }
        }
        found
    }

    fn fill_canonical(&mut self, k: usize, class: FlowClass, assigned: &[bool]) {
        let net = &self.scenario.network;
        for i in 0..net.num_nodes() {
            if assigned[i] {
                continue;
            }
            match class {
                FlowClass::Data => self.strategy.set_data_next(net, k, i, None),
                FlowClass::Result => self.strategy.set_result_next(net, k, i, self.canonical[k][i]),
            }
        }
    }

    /// Traffic of one task and class from the assigned rows; Kahn order on at
    /// most a handful of nodes.
    fn propagate(&mut self, k: usize, class: FlowClass) {
        let net = &self.scenario.network;
        let task = &self.scenario.tasks[k];
        let off = class.link_offset();
        let n = net.num_nodes();
        let ci = class_index(class);
        let mut t = vec![0.0; n];
        match class {
            FlowClass::Data => t.copy_from_slice(&task.rates),
            FlowClass::Result => {
                for i in 0..n {
                    t[i] = task.a * self.g[k][i];
                }
            }
        }
        let order = self
            .strategy
            .topological_order(net, k, class)
            .expect("search keeps strategies loop-free");
        for &u in &order {
            if class == FlowClass::Result && u == task.dest {
                continue;
            }
            let row = self.strategy.row(k, u, class);
            for (p, a) in net.out(u).iter().enumerate() {
                if row[off + p] > 0.0 {
                    t[a.node] += t[u] * row[off + p];
                }
            }
        }
        if class == FlowClass::Data {
            for i in 0..n {
                self.g[k][i] = t[i] * self.strategy.tasks[k].data[i][0];
            }
        }
        self.traffic[k][ci] = t;
    }

    fn evaluate_leaf(&mut self) -> Result<()> {
        self.evaluations += 1;
        if self.evaluations > self.budget {
            return Err(Error::SizeLimit(format!(
                "more than {} grid strategies",
                self.budget
            )));
        }
        let s = self.scenario;
        let net = &s.network;
        self.link_flow.iter_mut().for_each(|x| *x = 0.0);
        self.loads.iter_mut().for_each(|l| l.iter_mut().for_each(|x| *x = 0.0));
        for (k, task) in s.tasks.iter().enumerate() {
            for class in [FlowClass::Data, FlowClass::Result] {
                let off = class.link_offset();
                let t = &self.traffic[k][class_index(class)];
                for u in 0..net.num_nodes() {
                    if t[u] == 0.0 || (class == FlowClass::Result && u == task.dest) {
                        continue;
                    }
                    let row = self.strategy.row(k, u, class);
                    for (p, a) in net.out(u).iter().enumerate() {
                        self.link_flow[a.link] += t[u] * row[off + p];
                    }
                }
            }
            for i in 0..net.num_nodes() {
                self.loads[i][task.m] += self.g[k][i];
            }
        }
        let mut cost = 0.0;
        for (c, &f) in s.link_costs.iter().zip(&self.link_flow) {
            match c.eval(f)? {
                Evaluated::Finite(e) => cost += e.cost,
                Evaluated::Infeasible => return Ok(()),
            }
        }
        for (c, g) in s.compute.iter().zip(&self.loads) {
            match c.eval_into(g, &mut self.scratch)? {
                Evaluated::Finite(v) => cost += v,
                Evaluated::Infeasible => return Ok(()),
            }
        }
        if self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
            self.best = Some((cost, self.strategy.clone()));
        }
        Ok(())
    }

    fn stage(&mut self, k: usize, class: FlowClass, assigned: &mut Vec<bool>) -> Result<()> {
        let Some(u) = self.frontier(k, class, assigned) else {
            let saved: Vec<Vec<f64>> = (0..self.scenario.num_nodes())
                .map(|i| self.strategy.row(k, i, class).to_vec())
                .collect();
            self.fill_canonical(k, class, assigned);
            self.propagate(k, class);
            let next = match class {
                FlowClass::Data => Some((k, FlowClass::Result)),
                FlowClass::Result if k + 1 < self.scenario.num_tasks() => {
                    Some((k + 1, FlowClass::Data))
                }
                FlowClass::Result => None,
            };
            match next {
                Some((k2, c2)) => {
                    let mut fresh = vec![false; self.scenario.num_nodes()];
                    self.stage(k2, c2, &mut fresh)?;
                }
                None => self.evaluate_leaf()?,
            }
            for (i, row) in saved.into_iter().enumerate() {
                *self.strategy.row_mut(k, i, class) = row;
            }
            return Ok(());
        };
        let net = &self.scenario.network;
        let off = class.link_offset();
        let ci = class_index(class);
        for gi in 0..self.grids[u][ci].len() {
            // A new positive link u -> v must not close a cycle.
            let ok = net.out(u).iter().enumerate().all(|(p, a)| {
                self.grids[u][ci][gi][off + p] == 0.0
                    || !self.reaches(k, class, assigned, a.node, u)
            });
            if !ok {
                continue;
            }
            *self.strategy.row_mut(k, u, class) = self.grids[u][ci][gi].clone();
            assigned[u] = true;
            self.stage(k, class, assigned)?;
            assigned[u] = false;
        }
        Ok(())
    }
}

/// Exhaustive search over grid strategies (fractions in multiples of
/// `resolution`) restricted to loop-free strategies. Rows are enumerated only
/// at nodes that carry traffic; the others take canonical rows, which do not
/// affect the cost.
pub fn brute_force_small(scenario: &Scenario, resolution: f64) -> Result<(f64, Strategy)> {
    brute_force_with_budget(scenario, resolution, BRUTE_FORCE_BUDGET)
}

pub fn brute_force_with_budget(
    scenario: &Scenario,
    resolution: f64,
    budget: u64,
) -> Result<(f64, Strategy)> {
    let net = &scenario.network;
    let n = net.num_nodes();
    let choosers = (0..n).filter(|&i| !net.out(i).is_empty()).count();
    if choosers > 4 || scenario.num_tasks() > 2 {
        return Err(Error::SizeLimit(format!(
            "{choosers} nodes with choices and {} tasks (at most 4 and 2)",
            scenario.num_tasks()
        )));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Domain(format!("grid resolution must be in (0, 1], got {resolution}")));
    }
    let steps = (1.0 / resolution).round() as usize;
    let grids = (0..n)
        .map(|i| {
            let d = net.out(i).len();
            [simplex_grid(d + 1, steps), simplex_grid(d, steps)]
        })
        .collect();
    let canonical = scenario
        .tasks
        .iter()
        .map(|t| crate::paths::min_hop_to(net, t.dest).next)
        .collect();
    let mut search = Search {
        scenario,
        grids,
        canonical,
        strategy: Strategy::blank(scenario),
        traffic: vec![[vec![0.0; n], vec![0.0; n]]; scenario.num_tasks()],
        g: vec![vec![0.0; n]; scenario.num_tasks()],
        best: None,
        evaluations: 0,
        budget,
        scratch: vec![0.0; scenario.num_types()],
        loads: vec![vec![0.0; scenario.num_types()]; n],
        link_flow: vec![0.0; net.num_links()],
    };
    if scenario.num_tasks() == 0 {
        return Ok((0.0, Strategy::blank(scenario)));
    }
    let mut assigned = vec![false; n];
    search.stage(0, FlowClass::Data, &mut assigned)?;
    let (cost, mut best) = search
        .best
        .ok_or_else(|| Error::NoFeasibleStart("no grid strategy has finite cost".into()))?;
    best.normalize();
    Ok((cost, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn grid_sizes() {
        assert_eq!(simplex_grid(3, 20).len(), 231);
        assert_eq!(simplex_grid(2, 4).len(), 5);
        assert_eq!(simplex_grid(1, 4), vec![vec![1.0]]);
        assert!(simplex_grid(0, 4).is_empty());
    }

    #[test]
    fn fw_on_fixtures() {
        let r = fw_solve(&fixtures::e1(), 1e-9, 1000).unwrap();
        assert!((r.certificate.upper_bound - 2.5).abs() < 1e-9);
        assert!(r.certificate.gap <= 1e-6);
        let r = fw_solve(&fixtures::e0(), 1e-9, 1000).unwrap();
        assert!((r.certificate.upper_bound - 10.0).abs() < 1e-9);
    }

    #[test]
    fn fw_certifies_f3_optimum_below_stationary_point() {
        let r = fw_solve(&fixtures::f3(), 1e-9, 1000).unwrap();
        assert!((r.certificate.lower_bound - 3.0).abs() < 1e-9);
    }

    #[test]
    fn brute_force_e0() {
        let (c, _) = brute_force_small(&fixtures::e0(), 0.25).unwrap();
        assert_eq!(c, 10.0);
    }

    #[test]
    fn brute_force_e1_coarse() {
        let (c, st) = brute_force_small(&fixtures::e1(), 0.25).unwrap();
        assert!((c - 2.5).abs() < 1e-12);
        assert_eq!(evaluate_flows(&fixtures::e1(), &st).unwrap().cost, c);
    }

    #[test]
    fn brute_force_budget_is_enforced() {
        let r = brute_force_with_budget(&fixtures::e1(), 0.05, 10);
        assert!(matches!(r, Err(Error::SizeLimit(_))));
    }

    #[test]
    fn certificate_json_keys() {
        let c = Certificate { lower_bound: 1.0, upper_bound: 2.0, iterations: 3, gap: 1.0 };
        let v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        for key in ["lower_bound", "upper_bound", "iterations", "gap"] {
            assert!(v.get(key).is_some());
        }
    }
}
