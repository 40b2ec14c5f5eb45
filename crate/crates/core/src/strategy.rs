//! Per-node routing and computation fractions, and loop detection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Network, Scenario};

/// Fractions below this are snapped to zero when normalizing.
pub const SNAP_EPS: f64 = 1e-12;

/// Tolerance on row sums when validating a strategy.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowClass {
    Data,
    Result,
}

impl FlowClass {
    /// Position of the first link option inside a row of this class.
    pub fn link_offset(self) -> usize {
        match self {
            FlowClass::Data => 1,
            FlowClass::Result => 0,
        }
    }
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowClass::Data => "data",
            FlowClass::Result => "result",
        })
    }
}

/// Fractions of one task at every node.
///
/// `data[i][0]` is the share of node `i`'s data traffic computed locally and
/// `data[i][1 + p]` the share forwarded over `network.out(i)[p]`. `result[i][p]`
/// is the share of result traffic forwarded over `network.out(i)[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStrategy {
    pub data: Vec<Vec<f64>>,
    pub result: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub tasks: Vec<TaskStrategy>,
}

impl Strategy {
    /// Every node computes all of its data locally; result rows are left
    /// empty (all zero) and must be filled before use.
    pub fn blank(scenario: &Scenario) -> Self {
        let net = &scenario.network;
        let n = net.num_nodes();
        let task = TaskStrategy {
            data: (0..n)
                .map(|i| {
                    let mut row = vec![0.0; 1 + net.out(i).len()];
                    row[0] = 1.0;
                    row
                })
                .collect(),
            result: (0..n).map(|i| vec![0.0; net.out(i).len()]).collect(),
        };
        Strategy {
            tasks: vec![task; scenario.num_tasks()],
        }
    }

    pub fn row(&self, task: usize, node: usize, class: FlowClass) -> &[f64] {
        match class {
            FlowClass::Data => &self.tasks[task].data[node],
            FlowClass::Result => &self.tasks[task].result[node],
        }
    }

    pub fn row_mut(&mut self, task: usize, node: usize, class: FlowClass) -> &mut Vec<f64> {
        match class {
            FlowClass::Data => &mut self.tasks[task].data[node],
            FlowClass::Result => &mut self.tasks[task].result[node],
        }
    }

    /// Sets node `i`'s data row to forward everything to neighbor `j`
    /// (or compute locally when `j` is `None`).
    pub fn set_data_next(&mut self, net: &Network, task: usize, i: usize, j: Option<usize>) {
        let row = &mut self.tasks[task].data[i];
        row.iter_mut().for_each(|x| *x = 0.0);
        match j {
            None => row[0] = 1.0,
            Some(j) => {
                let p = position(net, i, j).expect("next hop must be an out-neighbor");
                row[1 + p] = 1.0;
            }
        }
    }

    /// Sets node `i`'s result row to forward everything to neighbor `j`
    /// (or clears it when `j` is `None`, as required at the destination).
    pub fn set_result_next(&mut self, net: &Network, task: usize, i: usize, j: Option<usize>) {
        let row = &mut self.tasks[task].result[i];
        row.iter_mut().for_each(|x| *x = 0.0);
        if let Some(j) = j {
            let p = position(net, i, j).expect("next hop must be an out-neighbor");
            row[p] = 1.0;
        }
    }

    /// Snaps tiny fractions to zero and renormalizes every non-empty row.
    pub fn normalize(&mut self) {
        for t in &mut self.tasks {
            for row in t.data.iter_mut().chain(t.result.iter_mut()) {
                normalize_row(row);
            }
        }
    }

    /// Checks shapes and the simplex constraints of every row.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let net = &scenario.network;
        if self.tasks.len() != scenario.num_tasks() {
            return Err(Error::InvalidStrategy(format!(
                "{} task rows for {} tasks",
                self.tasks.len(),
                scenario.num_tasks()
            )));
        }
        for (k, (ts, task)) in self.tasks.iter().zip(&scenario.tasks).enumerate() {
            if ts.data.len() != net.num_nodes() || ts.result.len() != net.num_nodes() {
                return Err(Error::InvalidStrategy(format!("task {k} has wrong node count")));
            }
            for i in 0..net.num_nodes() {
                let deg = net.out(i).len();
                let (d, r) = (&ts.data[i], &ts.result[i]);
                if d.len() != deg + 1 || r.len() != deg {
                    return Err(Error::InvalidStrategy(format!(
                        "task {k} node {i} row length does not match its out-degree"
                    )));
                }
                if d.iter().chain(r).any(|&x| !(0.0..=1.0 + SIMPLEX_TOL).contains(&x)) {
                    return Err(Error::InvalidStrategy(format!(
                        "task {k} node {i} has a fraction outside [0, 1]"
                    )));
                }
                let ds: f64 = d.iter().sum();
                if (ds - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidStrategy(format!(
                        "task {k} node {i} data fractions sum to {ds}"
                    )));
                }
                let rs: f64 = r.iter().sum();
                let want = if i == task.dest { 0.0 } else { 1.0 };
                if (rs - want).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidStrategy(format!(
                        "task {k} node {i} result fractions sum to {rs}, expected {want}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Topological order of the positive-fraction subgraph of one task and
    /// class, or a witness cycle.
    pub fn topological_order(
        &self,
        net: &Network,
        task: usize,
        class: FlowClass,
    ) -> std::result::Result<Vec<usize>, Vec<usize>> {
        let n = net.num_nodes();
        let off = class.link_offset();
        let mut indeg = vec![0usize; n];
        for i in 0..n {
            let row = self.row(task, i, class);
            for (p, a) in net.out(i).iter().enumerate() {
                if row[off + p] > 0.0 {
                    indeg[a.node] += 1;
                }
            }
        }
        let mut stack: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = stack.pop() {
            order.push(u);
            let row = self.row(task, u, class);
            for (p, a) in net.out(u).iter().enumerate().rev() {
                if row[off + p] > 0.0 {
                    indeg[a.node] -= 1;
                    if indeg[a.node] == 0 {
                        stack.push(a.node);
                    }
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(self
                .find_cycle(net, task, class)
                .expect("Kahn's algorithm left nodes, so a cycle exists"))
        }
    }

    /// A cycle in the positive-fraction subgraph, as a closed node sequence
    /// `[v0, v1, ..., v0]`.
    pub fn find_cycle(&self, net: &Network, task: usize, class: FlowClass) -> Option<Vec<usize>> {
        let n = net.num_nodes();
        let off = class.link_offset();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; n];
        for root in 0..n {
            if color[root] != 0 {
                continue;
            }
            let mut path = vec![root];
            let mut cursor = vec![0usize];
            color[root] = 1;
            while let Some(&u) = path.last() {
                let p = cursor.last_mut().unwrap();
                let out = net.out(u);
                let row = self.row(task, u, class);
                let mut next = None;
                while *p < out.len() {
                    let q = *p;
                    *p += 1;
                    if row[off + q] > 0.0 {
                        next = Some(out[q].node);
                        break;
                    }
                }
                match next {
                    Some(v) if color[v] == 1 => {
                        let start = path.iter().position(|&x| x == v).unwrap();
                        let mut cycle = path[start..].to_vec();
                        cycle.push(v);
                        return Some(cycle);
                    }
                    Some(v) if color[v] == 0 => {
                        color[v] = 1;
                        path.push(v);
                        cursor.push(0);
                    }
                    Some(_) => {}
                    None => {
                        color[u] = 2;
                        path.pop();
                        cursor.pop();
                    }
                }
            }
        }
        None
    }

    pub fn to_json(&self, net: &Network) -> Result<String> {
        let mut doc = BTreeMap::new();
        for (k, ts) in self.tasks.iter().enumerate() {
            let mut nodes = BTreeMap::new();
            for i in 0..net.num_nodes() {
                let mut data = BTreeMap::new();
                if ts.data[i][0] > 0.0 {
                    data.insert(LOCAL_KEY.to_string(), ts.data[i][0]);
                }
                let mut result = BTreeMap::new();
                for (p, a) in net.out(i).iter().enumerate() {
                    if ts.data[i][1 + p] > 0.0 {
                        data.insert(a.node.to_string(), ts.data[i][1 + p]);
                    }
                    if ts.result[i][p] > 0.0 {
                        result.insert(a.node.to_string(), ts.result[i][p]);
                    }
                }
                nodes.insert(i, RowsDoc { data, result });
            }
            doc.insert(k, nodes);
        }
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str, scenario: &Scenario) -> Result<Self> {
        let net = &scenario.network;
        let doc: BTreeMap<usize, BTreeMap<usize, RowsDoc>> = serde_json::from_str(text)?;
        let mut s = Strategy::blank(scenario);
        for t in &mut s.tasks {
            for row in &mut t.data {
                row[0] = 0.0;
            }
        }
        for (k, nodes) in doc {
            if k >= s.tasks.len() {
                return Err(Error::InvalidStrategy(format!("unknown task {k}")));
            }
            for (i, rows) in nodes {
                if i >= net.num_nodes() {
                    return Err(Error::InvalidStrategy(format!("unknown node {i}")));
                }
                for (key, x) in rows.data {
                    if key == LOCAL_KEY {
                        s.tasks[k].data[i][0] = x;
                    } else {
                        let p = parse_hop(net, i, &key)?;
                        s.tasks[k].data[i][1 + p] = x;
                    }
                }
                for (key, x) in rows.result {
                    let p = parse_hop(net, i, &key)?;
                    s.tasks[k].result[i][p] = x;
                }
            }
        }
        s.validate(scenario)?;
        Ok(s)
    }
}

/// JSON key for the local-computation option of a data row.
pub const LOCAL_KEY: &str = "local";

#[derive(Debug, Serialize, Deserialize)]
struct RowsDoc {
    #[serde(default)]
    data: BTreeMap<String, f64>,
    #[serde(default)]
    result: BTreeMap<String, f64>,
}

fn parse_hop(net: &Network, i: usize, key: &str) -> Result<usize> {
    let j: usize = key
        .parse()
        .map_err(|_| Error::InvalidStrategy(format!("bad next-hop key {key:?}")))?;
    position(net, i, j)
        .ok_or_else(|| Error::InvalidStrategy(format!("({i}, {j}) is not a link")))
}

/// Index of neighbor `j` in `net.out(i)`.
pub fn position(net: &Network, i: usize, j: usize) -> Option<usize> {
    net.out(i).iter().position(|a| a.node == j)
}

pub(crate) fn normalize_row(row: &mut [f64]) {
    let mut sum = 0.0;
    for x in row.iter_mut() {
        if *x < SNAP_EPS {
            *x = 0.0;
        }
        sum += *x;
    }
    if sum > 0.0 {
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

/// One cycle found by [`detect_loops`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopWitness {
    pub task: usize,
    pub class: FlowClass,
    pub cycle: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopReport {
    pub loops: Vec<LoopWitness>,
}

impl LoopReport {
    pub fn is_loop_free(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.loops.into_iter().next() {
            None => Ok(()),
            Some(w) => Err(Error::LoopDetected {
                task: w.task,
                class: w.class,
                cycle: w.cycle,
            }),
        }
    }
}

/// Checks, per task, that the positive data subgraph and the positive result
/// subgraph are each acyclic. A data path followed by a result path that
/// returns to its start is not a loop.
pub fn detect_loops(strategy: &Strategy, net: &Network) -> LoopReport {
    let mut loops = Vec::new();
    for task in 0..strategy.tasks.len() {
        for class in [FlowClass::Data, FlowClass::Result] {
            if let Some(cycle) = strategy.find_cycle(net, task, class) {
                loops.push(LoopWitness { task, class, cycle });
            }
        }
    }
    LoopReport { loops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn e1_forward_chain_is_loop_free() {
        let s = fixtures::e1();
        let st = fixtures::e1_optimal_strategy(&s);
        st.validate(&s).unwrap();
        assert!(detect_loops(&st, &s.network).is_loop_free());
    }

    #[test]
    fn two_cycle_is_reported_with_witness() {
        let s = fixtures::e1();
        let mut st = fixtures::e1_optimal_strategy(&s);
        st.set_data_next(&s.network, 0, 1, Some(0));
        let report = detect_loops(&st, &s.network);
        assert_eq!(report.loops.len(), 1);
        let w = &report.loops[0];
        assert_eq!(w.class, FlowClass::Data);
        assert_eq!(w.cycle, vec![0, 1, 0]);
    }

    #[test]
    fn e0_local_computation_is_loop_free() {
        let s = fixtures::e0();
        let st = fixtures::e0_optimal_strategy(&s);
        st.validate(&s).unwrap();
        assert!(detect_loops(&st, &s.network).is_loop_free());
    }

    #[test]
    fn data_then_result_cycle_is_not_a_loop() {
        // Data 0 -> 1, computed at 1, result 1 -> 0 back to the source.
        let s = fixtures::e0();
        let net = &s.network;
        let mut st = fixtures::e0_optimal_strategy(&s);
        st.set_data_next(net, 0, 0, Some(1));
        st.set_data_next(net, 0, 1, None);
        st.set_result_next(net, 0, 1, Some(0));
        assert!(detect_loops(&st, net).is_loop_free());
    }

    #[test]
    fn validate_rejects_broken_rows() {
        let s = fixtures::e1();
        let mut st = fixtures::e1_optimal_strategy(&s);
        st.tasks[0].data[0][0] = 0.5;
        assert!(st.validate(&s).is_err());
        let mut st = fixtures::e1_optimal_strategy(&s);
        st.set_result_next(&s.network, 0, 2, Some(0));
        assert!(st.validate(&s).is_err(), "destination must be a sink");
    }

    #[test]
    fn normalize_snaps_tiny_entries() {
        let mut row = vec![0.5, 1e-13, 0.5];
        normalize_row(&mut row);
        assert_eq!(row, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn json_round_trip() {
        let s = fixtures::e1();
        let mut st = fixtures::e1_optimal_strategy(&s);
        st.tasks[0].data[0] = vec![0.1, 0.2 + 0.1, 0.6];
        let text = st.to_json(&s.network).unwrap();
        let back = Strategy::from_json(&text, &s).unwrap();
        assert_eq!(back, st);
    }
}
