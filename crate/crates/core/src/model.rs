//! Network graph, link and computation cost functions, tasks and scenarios.
//!
//! Every cost function is increasing and convex on its domain and exposes
//! exact first and second derivatives. Capacity-limited costs report
//! [`Evaluated::Infeasible`] instead of failing, so optimizers can treat a
//! capacity violation as an infinite cost.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Queue-type costs whose load is within this distance of capacity are infeasible.
pub const CAPACITY_GUARD: f64 = 1e-12;

/// Outcome of evaluating a capacity-limited cost function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluated<T> {
    Finite(T),
    Infeasible,
}

impl<T> Evaluated<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Evaluated::Finite(_))
    }

    pub fn finite(self) -> Option<T> {
        match self {
            Evaluated::Finite(v) => Some(v),
            Evaluated::Infeasible => None,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Evaluated<U> {
        match self {
            Evaluated::Finite(v) => Evaluated::Finite(f(v)),
            Evaluated::Infeasible => Evaluated::Infeasible,
        }
    }
}

impl Evaluated<f64> {
    /// The value, with the infeasible marker mapped to `+inf`.
    pub fn or_infinity(self) -> f64 {
        match self {
            Evaluated::Finite(v) => v,
            Evaluated::Infeasible => f64::INFINITY,
        }
    }
}

/// Value and derivatives of a link cost at one flow rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEval {
    pub cost: f64,
    pub first: f64,
    pub second: f64,
}

/// Communication cost of a directed link as a function of its total flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "param", rename_all = "snake_case")]
pub enum LinkCost {
    /// `w * F` with unit weight `w`.
    Linear(f64),
    /// M/M/1 queue length `F / (d - F)` with service capacity `d`.
    Queue(f64),
}

impl LinkCost {
    pub fn param(&self) -> f64 {
        match *self {
            LinkCost::Linear(w) => w,
            LinkCost::Queue(d) => d,
        }
    }

    pub fn eval(&self, flow: f64) -> Result<Evaluated<LinkEval>> {
        if !(flow >= 0.0) {
            return Err(Error::Domain(format!("link flow must be non-negative, got {flow}")));
        }
        Ok(match *self {
            LinkCost::Linear(w) => Evaluated::Finite(LinkEval {
                cost: w * flow,
                first: w,
                second: 0.0,
            }),
            LinkCost::Queue(cap) => {
                if flow >= cap - CAPACITY_GUARD {
                    Evaluated::Infeasible
                } else {
                    let gap = cap - flow;
                    Evaluated::Finite(LinkEval {
                        cost: flow / gap,
                        first: cap / (gap * gap),
                        second: 2.0 * cap / (gap * gap * gap),
                    })
                }
            }
        })
    }

    /// First derivative at zero flow.
    pub fn marginal_at_zero(&self) -> f64 {
        match *self {
            LinkCost::Linear(w) => w,
            LinkCost::Queue(cap) => 1.0 / cap,
        }
    }

    /// Supremum of the second derivative over the flows whose cost does not
    /// exceed `level`. The second derivative is non-decreasing, so this is its
    /// value at the largest such flow.
    pub fn sublevel_curvature(&self, level: f64) -> f64 {
        match *self {
            LinkCost::Linear(_) => 0.0,
            LinkCost::Queue(cap) => {
                let gap = cap / (1.0 + level);
                2.0 * cap / (gap * gap * gap)
            }
        }
    }

    /// Largest flow whose cost does not exceed `level`.
    pub fn sublevel_flow(&self, level: f64) -> f64 {
        match *self {
            LinkCost::Linear(w) => level / w,
            LinkCost::Queue(cap) => cap * level / (1.0 + level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeKind {
    /// `s * sum_m c_m g^m`.
    SumLinear,
    /// `W / (s - W)` with `W = sum_m c_m g^m`.
    SumQueue,
}

/// Computation cost of a node as a function of its per-type load vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeCost {
    pub kind: ComputeKind,
    pub s: f64,
    pub c: Vec<f64>,
}

/// Computation cost and its gradient with respect to the per-type loads.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeEval {
    pub cost: f64,
    pub grad: Vec<f64>,
}

impl ComputeCost {
    pub fn num_types(&self) -> usize {
        self.c.len()
    }

    fn weighted(&self, loads: &[f64]) -> Result<f64> {
        if loads.len() != self.c.len() {
            return Err(Error::Shape {
                expected: self.c.len(),
                got: loads.len(),
            });
        }
        let mut w = 0.0;
        for (&g, &c) in loads.iter().zip(&self.c) {
            if !(g >= 0.0) {
                return Err(Error::Domain(format!(
                    "computation load must be non-negative, got {g}"
                )));
            }
            w += c * g;
        }
        Ok(w)
    }

    /// Evaluates the cost and writes the gradient into `grad`.
    pub fn eval_into(&self, loads: &[f64], grad: &mut [f64]) -> Result<Evaluated<f64>> {
        let w = self.weighted(loads)?;
        if grad.len() != self.c.len() {
            return Err(Error::Shape {
                expected: self.c.len(),
                got: grad.len(),
            });
        }
        match self.kind {
            ComputeKind::SumLinear => {
                for (g, &c) in grad.iter_mut().zip(&self.c) {
                    *g = self.s * c;
                }
                Ok(Evaluated::Finite(self.s * w))
            }
            ComputeKind::SumQueue => {
                if w >= self.s - CAPACITY_GUARD {
                    return Ok(Evaluated::Infeasible);
                }
                let gap = self.s - w;
                let dw = self.s / (gap * gap);
                for (g, &c) in grad.iter_mut().zip(&self.c) {
                    *g = c * dw;
                }
                Ok(Evaluated::Finite(w / gap))
            }
        }
    }

    pub fn eval(&self, loads: &[f64]) -> Result<Evaluated<ComputeEval>> {
        let mut grad = vec![0.0; self.c.len()];
        Ok(match self.eval_into(loads, &mut grad)? {
            Evaluated::Finite(cost) => Evaluated::Finite(ComputeEval { cost, grad }),
            Evaluated::Infeasible => Evaluated::Infeasible,
        })
    }

    /// Partial derivative with respect to type `m` at zero load.
    pub fn marginal_at_zero(&self, m: usize) -> f64 {
        match self.kind {
            ComputeKind::SumLinear => self.s * self.c[m],
            ComputeKind::SumQueue => self.c[m] / self.s,
        }
    }

    /// Supremum of the second partial derivative in type `m` over the loads
    /// whose cost does not exceed `level`.
    pub fn sublevel_curvature(&self, m: usize, level: f64) -> f64 {
        match self.kind {
            ComputeKind::SumLinear => 0.0,
            ComputeKind::SumQueue => {
                let gap = self.s / (1.0 + level);
                2.0 * self.c[m] * self.c[m] * self.s / (gap * gap * gap)
            }
        }
    }

    /// Largest weighted load `W` that keeps the node feasible, if bounded.
    pub fn capacity(&self) -> Option<f64> {
        match self.kind {
            ComputeKind::SumLinear => None,
            ComputeKind::SumQueue => Some(self.s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
}

/// Neighbor entry in an adjacency list: the neighbor and the link joining them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adj {
    pub node: usize,
    pub link: usize,
}

/// Directed graph with dense node ids `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    links: Vec<Link>,
    out: Vec<Vec<Adj>>,
    inc: Vec<Vec<Adj>>,
}

impl Network {
    /// Builds the adjacency structure. Rejects out-of-range endpoints,
    /// self-loops and duplicate links; connectivity is checked by
    /// [`validate_scenario`].
    pub fn new(n: usize, links: Vec<Link>) -> Result<Self> {
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        let mut seen = std::collections::BTreeSet::new();
        for (id, l) in links.iter().enumerate() {
            if l.from >= n || l.to >= n {
                return Err(Error::InvalidScenario(format!(
                    "link ({}, {}) references a node outside 0..{n}",
                    l.from, l.to
                )));
            }
            if l.from == l.to {
                return Err(Error::InvalidScenario(format!("self-loop at node {}", l.from)));
            }
            if !seen.insert((l.from, l.to)) {
                return Err(Error::InvalidScenario(format!(
                    "duplicate link ({}, {})",
                    l.from, l.to
                )));
            }
            out[l.from].push(Adj { node: l.to, link: id });
            inc[l.to].push(Adj { node: l.from, link: id });
        }
        Ok(Self { n, links, out, inc })
    }

    /// Builds a network where every undirected edge becomes two opposite links.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut links = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            links.push(Link { from: u, to: v });
            links.push(Link { from: v, to: u });
        }
        Self::new(n, links)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: usize) -> Link {
        self.links[id]
    }

    pub fn out(&self, i: usize) -> &[Adj] {
        &self.out[i]
    }

    pub fn inc(&self, i: usize) -> &[Adj] {
        &self.inc[i]
    }

    pub fn find_link(&self, from: usize, to: usize) -> Option<usize> {
        self.out[from].iter().find(|a| a.node == to).map(|a| a.link)
    }

    pub fn max_out_degree(&self) -> usize {
        self.out.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn reach_count(&self, start: usize, forward: bool) -> usize {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            let adj = if forward { &self.out[u] } else { &self.inc[u] };
            for a in adj {
                if !seen[a.node] {
                    seen[a.node] = true;
                    count += 1;
                    queue.push_back(a.node);
                }
            }
        }
        count
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.n == 0 || (self.reach_count(0, true) == self.n && self.reach_count(0, false) == self.n)
    }

    /// Hop distance from every node to `target` (`usize::MAX` if unreachable).
    pub fn hops_to(&self, target: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        dist[target] = 0;
        let mut queue = VecDeque::from([target]);
        while let Some(u) = queue.pop_front() {
            for a in &self.inc[u] {
                if dist[a.node] == usize::MAX {
                    dist[a.node] = dist[u] + 1;
                    queue.push_back(a.node);
                }
            }
        }
        dist
    }
}

/// A computation task `(d, m)`: input data injected at sources is computed
/// somewhere in the network and the result, `a` units per unit of data, is
/// delivered to `dest`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub dest: usize,
    pub m: usize,
    pub a: f64,
    /// Exogenous input rate per node (dense, one entry per node).
    pub rates: Vec<f64>,
}

impl Task {
    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.rates
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: Network,
    pub link_costs: Vec<LinkCost>,
    pub compute: Vec<ComputeCost>,
    pub tasks: Vec<Task>,
    pub seed: u64,
}

impl Scenario {
    pub fn num_nodes(&self) -> usize {
        self.network.num_nodes()
    }

    pub fn num_links(&self) -> usize {
        self.network.num_links()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Number of computation types `M`.
    pub fn num_types(&self) -> usize {
        self.compute.first().map_or(0, ComputeCost::num_types)
    }

    /// Copy of the scenario with every input rate multiplied by `factor`.
    pub fn scale_rates(&self, factor: f64) -> Scenario {
        let mut s = self.clone();
        for t in &mut s.tasks {
            for r in &mut t.rates {
                *r *= factor;
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// Human-readable list of every invariant a scenario violates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(self.violations.join("; ")))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut v = Vec::new();
    let n = s.num_nodes();
    let net = &s.network;
    if n == 0 {
        v.push("network has no nodes".to_string());
    } else if !net.is_strongly_connected() {
        v.push("not strongly connected".to_string());
    }
    if s.link_costs.len() != net.num_links() {
        v.push(format!(
            "{} link cost functions for {} links",
            s.link_costs.len(),
            net.num_links()
        ));
    }
    for (id, lc) in s.link_costs.iter().enumerate() {
        let p = lc.param();
        if !(p > 0.0 && p.is_finite()) {
            v.push(format!("link {id} has non-positive cost parameter {p}"));
        }
    }
    if s.compute.len() != n {
        v.push(format!("{} computation cost functions for {n} nodes", s.compute.len()));
    }
    let m_types = s.num_types();
    for (i, cc) in s.compute.iter().enumerate() {
        if cc.num_types() != m_types {
            v.push(format!(
                "node {i} has {} computation weights, expected {m_types}",
                cc.num_types()
            ));
        }
        if !(cc.s > 0.0 && cc.s.is_finite()) {
            v.push(format!("node {i} has non-positive computation parameter {}", cc.s));
        }
        if cc.c.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            v.push(format!("node {i} has a non-positive computation weight"));
        }
    }
    for (k, t) in s.tasks.iter().enumerate() {
        if t.dest >= n {
            v.push(format!("task {k} destination {} does not exist", t.dest));
        }
        if t.m >= m_types {
            v.push(format!("task {k} computation type {} out of range", t.m));
        }
        if !t.a.is_finite() {
            v.push(format!("task {k} result ratio is not finite"));
        } else if t.a < 0.0 {
            v.push(format!("task {k} result ratio negative"));
        }
        if t.rates.len() != n {
            v.push(format!("task {k} has {} rates for {n} nodes", t.rates.len()));
        }
        if t.rates.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            v.push(format!("task {k} has a negative or non-finite input rate"));
        } else if !(t.total_rate() > 0.0) {
            v.push(format!("task {k} has no input data"));
        }
    }
    ValidationReport { violations: v }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinkDoc {
    from: usize,
    to: usize,
    cost: LinkCost,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComputeDoc {
    node: usize,
    #[serde(rename = "type")]
    kind: ComputeKind,
    s: f64,
    c: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskDoc {
    dest: usize,
    m: usize,
    a: f64,
    rates: BTreeMap<usize, f64>,
}

/// On-disk scenario layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioDoc {
    nodes: usize,
    links: Vec<LinkDoc>,
    compute: Vec<ComputeDoc>,
    tasks: Vec<TaskDoc>,
    seed: u64,
}

impl From<&Scenario> for ScenarioDoc {
    fn from(s: &Scenario) -> Self {
        ScenarioDoc {
            nodes: s.num_nodes(),
            links: s
                .network
                .links()
                .iter()
                .zip(&s.link_costs)
                .map(|(l, &cost)| LinkDoc {
                    from: l.from,
                    to: l.to,
                    cost,
                })
                .collect(),
            compute: s
                .compute
                .iter()
                .enumerate()
                .map(|(node, c)| ComputeDoc {
                    node,
                    kind: c.kind,
                    s: c.s,
                    c: c.c.clone(),
                })
                .collect(),
            tasks: s
                .tasks
                .iter()
                .map(|t| TaskDoc {
                    dest: t.dest,
                    m: t.m,
                    a: t.a,
                    rates: t
                        .rates
                        .iter()
                        .enumerate()
                        .filter(|(_, &r)| r != 0.0)
                        .map(|(i, &r)| (i, r))
                        .collect(),
                })
                .collect(),
            seed: s.seed,
        }
    }
}

impl TryFrom<ScenarioDoc> for Scenario {
    type Error = Error;

    fn try_from(doc: ScenarioDoc) -> Result<Self> {
        let n = doc.nodes;
        let network = Network::new(
            n,
            doc.links.iter().map(|l| Link { from: l.from, to: l.to }).collect(),
        )?;
        let link_costs = doc.links.iter().map(|l| l.cost).collect();
        let mut compute: Vec<Option<ComputeCost>> = vec![None; n];
        for c in doc.compute {
            if c.node >= n {
                return Err(Error::InvalidScenario(format!(
                    "computation cost for unknown node {}",
                    c.node
                )));
            }
            compute[c.node] = Some(ComputeCost {
                kind: c.kind,
                s: c.s,
                c: c.c,
            });
        }
        let compute = compute
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::InvalidScenario(format!("node {i} has no computation cost"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tasks = doc
            .tasks
            .into_iter()
            .map(|t| {
                let mut rates = vec![0.0; n];
                for (node, r) in t.rates {
                    if node >= n {
                        return Err(Error::InvalidScenario(format!(
                            "input rate at unknown node {node}"
                        )));
                    }
                    rates[node] = r;
                }
                Ok(Task {
                    dest: t.dest,
                    m: t.m,
                    a: t.a,
                    rates,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            network,
            link_costs,
            compute,
            tasks,
            seed: doc.seed,
        })
    }
}
