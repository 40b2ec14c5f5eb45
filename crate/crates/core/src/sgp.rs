//! Scaled gradient projection: blocked sets, scaling matrices, the scaled
//! simplex projection and the synchronous/asynchronous drivers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{evaluate_flows, FlowState};
use crate::init::initial_strategy;
use crate::marginals::{
    compute_marginals, lemma1_gap_restricted, theorem1_gap_restricted, MarginalState,
    Restriction, RowRule,
};
use crate::model::Scenario;
use crate::strategy::{normalize_row, FlowClass, Strategy};

/// Per task, node and class: which options are blocked. Indexed like the
/// strategy rows (data option 0, local computation, is never blocked).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedSets {
    pub data: Vec<Vec<Vec<bool>>>,
    pub result: Vec<Vec<Vec<bool>>>,
}

impl BlockedSets {
    pub fn row(&self, task: usize, node: usize, class: FlowClass) -> &[bool] {
        match class {
            FlowClass::Data => &self.data[task][node],
            FlowClass::Result => &self.result[task][node],
        }
    }
}

/// Nodes from which a positive-fraction path reaches an improper link, i.e. a
/// link `p -> q` carrying flow although `marg[q] >= marg[p]`.
fn tagged_nodes(
    scenario: &Scenario,
    strategy: &Strategy,
    task: usize,
    class: FlowClass,
    marg: &[f64],
) -> Result<Vec<bool>> {
    let net = &scenario.network;
    let off = class.link_offset();
    let order = strategy
        .topological_order(net, task, class)
        .map_err(|cycle| Error::LoopDetected { task, class, cycle })?;
    let mut tagged = vec![false; net.num_nodes()];
    for &u in order.iter().rev() {
        let row = strategy.row(task, u, class);
        tagged[u] = net.out(u).iter().enumerate().any(|(p, a)| {
            row[off + p] > 0.0 && (marg[a.node] >= marg[u] || tagged[a.node])
        });
    }
    Ok(tagged)
}

/// Neighbor `j` of `i` is blocked when its marginal is not smaller than `i`'s
/// or when a positive path from `j` contains an improper link.
pub fn blocked_sets(
    scenario: &Scenario,
    strategy: &Strategy,
    marginals: &MarginalState,
) -> Result<BlockedSets> {
    let net = &scenario.network;
    let n = net.num_nodes();
    let mut sets = BlockedSets { data: Vec::new(), result: Vec::new() };
    for (k, tm) in marginals.tasks.iter().enumerate() {
        for class in [FlowClass::Data, FlowClass::Result] {
            let marg = tm.node_marginal(class);
            let tagged = tagged_nodes(scenario, strategy, k, class, marg)?;
            let off = class.link_offset();
            let rows: Vec<Vec<bool>> = (0..n)
                .map(|i| {
                    let mut row = vec![false; off + net.out(i).len()];
                    if class == FlowClass::Result && i == tm.dest {
                        return row;
                    }
                    for (p, a) in net.out(i).iter().enumerate() {
                        row[off + p] = marg[a.node] >= marg[i] || tagged[a.node];
                    }
                    row
                })
                .collect();
            match class {
                FlowClass::Data => sets.data.push(rows),
                FlowClass::Result => sets.result.push(rows),
            }
        }
    }
    Ok(sets)
}

/// Second-derivative bounds over the states costing at most `d0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBounds {
    pub d0: f64,
    /// Per link.
    pub link: Vec<f64>,
    /// Largest link bound.
    pub global: f64,
    /// Per node and computation type.
    pub compute: Vec<Vec<f64>>,
}

pub fn curvature_bounds(scenario: &Scenario, d0: f64) -> CurvatureBounds {
    let link: Vec<f64> = scenario.link_costs.iter().map(|c| c.sublevel_curvature(d0)).collect();
    let global = link.iter().copied().fold(0.0, f64::max);
    let compute = scenario
        .compute
        .iter()
        .map(|c| (0..c.num_types()).map(|m| c.sublevel_curvature(m, d0)).collect())
        .collect();
    CurvatureBounds { d0, link, global, compute }
}

/// Longest positive-path hop counts: to the destination for results, and to
/// a computing node (the computation hop counting 0) for data. `data_tail`
/// bounds the curvature met by a unit of data after it reaches a node: the
/// computation at any node where it may be processed plus the result path
/// from there, `C'' + a^2 h+ A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hops {
    pub data: Vec<Vec<usize>>,
    pub result: Vec<Vec<usize>>,
    pub data_tail: Vec<Vec<f64>>,
}

pub fn hop_counts(scenario: &Scenario, strategy: &Strategy, bounds: &CurvatureBounds) -> Result<Hops> {
    let net = &scenario.network;
    let n = net.num_nodes();
    let mut hops = Hops { data: Vec::new(), result: Vec::new(), data_tail: Vec::new() };
    for (k, task) in scenario.tasks.iter().enumerate() {
        for class in [FlowClass::Result, FlowClass::Data] {
            let off = class.link_offset();
            let order = strategy
                .topological_order(net, k, class)
                .map_err(|cycle| Error::LoopDetected { task: k, class, cycle })?;
            let mut h = vec![0usize; n];
            let mut tail = vec![0.0f64; n];
            for &u in order.iter().rev() {
                let row = strategy.row(k, u, class);
                let mut best = 0;
                for (p, a) in net.out(u).iter().enumerate() {
                    if row[off + p] > 0.0 {
                        best = best.max(1 + h[a.node]);
                        tail[u] = tail[u].max(tail[a.node]);
                    }
                }
                h[u] = best;
                if class == FlowClass::Data && row[0] > 0.0 {
                    let hr = hops.result[k][u] as f64;
                    tail[u] = tail[u].max(bounds.compute[u][task.m] + task.a * task.a * hr * bounds.global);
                }
            }
            match class {
                FlowClass::Data => {
                    hops.data.push(h);
                    hops.data_tail.push(tail);
                }
                FlowClass::Result => hops.result.push(h),
            }
        }
    }
    Ok(hops)
}

/// Diagonal of the scaling matrix of one row. Entries of blocked options are
/// computed like the others but are irrelevant to the projection.
///
/// Result rows use `t/2 (A_ij + N h_j A)` with `N` the number of unblocked
/// options. Data rows add to the hop term the curvature met after the data
/// is computed (see [`Hops::data_tail`]), and the local option uses the
/// node's own computation and result-path curvature.
#[allow(clippy::too_many_arguments)]
pub fn scaling_matrix(
    scenario: &Scenario,
    bounds: &CurvatureBounds,
    hops: &Hops,
    flows: &FlowState,
    node: usize,
    task: usize,
    class: FlowClass,
    blocked: &[bool],
    floor: f64,
) -> Vec<f64> {
    let net = &scenario.network;
    let off = class.link_offset();
    let (t, h) = match class {
        FlowClass::Data => (flows.tasks[task].t_data[node], &hops.data[task]),
        FlowClass::Result => (flows.tasks[task].t_result[node], &hops.result[task]),
    };
    let unblocked = (off..blocked.len()).filter(|&j| !blocked[j]).count() as f64;
    let min = floor * (1.0 + bounds.global);
    let mut diag = Vec::with_capacity(blocked.len());
    let tk = &scenario.tasks[task];
    if class == FlowClass::Data {
        let hr = hops.result[task][node] as f64;
        let own = bounds.compute[node][tk.m] + tk.a * tk.a * hr * bounds.global;
        diag.push((t / 2.0 * own).max(min));
    }
    for a in net.out(node) {
        let mut downstream = h[a.node] as f64 * bounds.global;
        if class == FlowClass::Data {
            downstream += hops.data_tail[task][a.node];
        }
        let curv = bounds.link[a.link] + unblocked * downstream;
        diag.push((t / 2.0 * curv).max(min));
    }
    diag
}

/// Minimizes `delta.(v - phi) + (v - phi)' diag(m) (v - phi)` over the simplex
/// with blocked options fixed at zero.
pub fn project_scaled(phi: &[f64], delta: &[f64], m: &[f64], blocked: &[bool]) -> Result<Vec<f64>> {
    let n = phi.len();
    if delta.len() != n || m.len() != n || blocked.len() != n {
        return Err(Error::Shape { expected: n, got: delta.len().min(m.len()).min(blocked.len()) });
    }
    let free: Vec<usize> = (0..n).filter(|&j| !blocked[j]).collect();
    if free.is_empty() {
        return Err(Error::NoFeasibleDirection);
    }
    // Shifting delta by a constant only shifts the multiplier; anchoring at
    // the free minimum keeps the arithmetic well scaled.
    let base = free.iter().map(|&j| delta[j]).fold(f64::INFINITY, f64::min);
    // v_j = max(0, c_j + lambda w_j), active once lambda exceeds c_j / -w_j.
    let w: Vec<f64> = m.iter().map(|&x| 0.5 / x).collect();
    let c: Vec<f64> = (0..n).map(|j| phi[j] - (delta[j] - base) * w[j]).collect();
    let mut order = free.clone();
    order.sort_by(|&x, &y| (-c[x] / w[x]).total_cmp(&(-c[y] / w[y])).then(x.cmp(&y)));
    let (mut sc, mut sw) = (0.0, 0.0);
    let mut lambda = 0.0;
    for (idx, &j) in order.iter().enumerate() {
        sc += c[j];
        sw += w[j];
        lambda = (1.0 - sc) / sw;
        let next = order.get(idx + 1).map(|&x| -c[x] / w[x]);
        if next.is_none_or(|b| lambda <= b) {
            break;
        }
    }
    let mut v = vec![0.0; n];
    for &j in &free {
        v[j] = (c[j] + lambda * w[j]).max(0.0);
    }
    normalize_row(&mut v);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    /// Curvature- and hop-based diagonal scaling.
    Sgp,
    /// Plain gradient projection with a fixed step: `M = I / (2 step)`.
    Gp { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every row updates from one marginal snapshot per iteration.
    Synchronous,
    /// One uniformly chosen row updates per iteration, with fresh marginals.
    Asynchronous { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    pub max_iters: usize,
    /// Stop once the optimality gap is at most `tolerance * (1 + |D|)`.
    pub tolerance: f64,
    pub schedule: Schedule,
    /// Lower bound on scaling entries, relative to `1 + A(D0)`.
    pub scaling_floor: f64,
    pub scaling: Scaling,
    /// Re-derive the curvature bounds from the current cost after every
    /// accepted step instead of keeping those of the starting cost. Costs
    /// never increase, so the current sublevel set is the smaller region the
    /// iterates can still visit.
    pub refresh_reference: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            max_iters: 5000,
            tolerance: 1e-6,
            schedule: Schedule::Synchronous,
            scaling_floor: 1e-6,
            scaling: Scaling::Sgp,
            refresh_reference: true,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.scaling_floor > 0.0) {
            return Err(Error::Domain("tolerance and scaling floor must be positive".into()));
        }
        if let Scaling::Gp { step } = self.scaling {
            if !(step > 0.0) {
                return Err(Error::Domain("step size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One row of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub cost: f64,
    pub theorem1_gap: f64,
    pub lemma1_gap: f64,
    pub updates_applied: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub strategy: Strategy,
    pub trajectory: Vec<TrajectoryPoint>,
    pub termination: Termination,
}

impl RunResult {
    pub fn final_cost(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |p| p.cost)
    }

    pub fn final_gap(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |p| p.theorem1_gap)
    }

    /// Iterations performed (the index of the last trajectory point).
    pub fn iterations(&self) -> usize {
        self.trajectory.last().map_or(0, |p| p.iter)
    }
}

/// Stateful driver. Holds the current strategy with its flows and marginals.
#[derive(Debug, Clone)]
pub struct Optimizer {
    scenario: Scenario,
    config: UpdateConfig,
    restriction: Restriction,
    strategy: Strategy,
    flows: FlowState,
    marginals: MarginalState,
    bounds: CurvatureBounds,
    rng: ChaCha8Rng,
    rows: Vec<(usize, usize, FlowClass)>,
    iteration: usize,
}

/// Largest number of halvings applied to a step that leaves the feasible
/// region before the step is abandoned.
const MAX_BACKTRACKS: usize = 60;

impl Optimizer {
    pub fn new(scenario: Scenario, strategy: Strategy, config: UpdateConfig) -> Result<Self> {
        let restriction = Restriction::free(&scenario);
        Self::with_restriction(scenario, strategy, config, restriction)
    }

    pub fn with_restriction(
        scenario: Scenario,
        strategy: Strategy,
        config: UpdateConfig,
        restriction: Restriction,
    ) -> Result<Self> {
        config.validate()?;
        strategy.validate(&scenario)?;
        let flows = evaluate_flows(&scenario, &strategy)?;
        if !flows.feasible {
            return Err(Error::NoFeasibleStart("starting strategy has infinite cost".into()));
        }
        let marginals = compute_marginals(&scenario, &strategy, &flows)?;
        let bounds = curvature_bounds(&scenario, flows.cost);
        let seed = match config.schedule {
            Schedule::Asynchronous { seed } => seed,
            Schedule::Synchronous => 0,
        };
        let rows = updatable_rows(&scenario, &restriction);
        Ok(Optimizer {
            scenario,
            config,
            restriction,
            strategy,
            flows,
            marginals,
            bounds,
            rng: ChaCha8Rng::seed_from_u64(seed),
            rows,
            iteration: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn flows(&self) -> &FlowState {
        &self.flows
    }

    pub fn marginals(&self) -> &MarginalState {
        &self.marginals
    }

    pub fn config(&self) -> &UpdateConfig {
        &self.config
    }

    pub fn bounds(&self) -> &CurvatureBounds {
        &self.bounds
    }

    pub fn restriction(&self) -> &Restriction {
        &self.restriction
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn cost(&self) -> f64 {
        self.flows.cost
    }

    pub fn theorem1_gap(&self) -> f64 {
        theorem1_gap_restricted(&self.marginals, &self.strategy, Some(&self.restriction))
            .expect("optimizer keeps the strategy on the simplex")
    }

    pub fn lemma1_gap(&self) -> f64 {
        lemma1_gap_restricted(&self.marginals, &self.strategy, Some(&self.restriction))
            .expect("optimizer keeps the strategy on the simplex")
    }

    pub fn is_converged(&self) -> bool {
        self.theorem1_gap() <= self.config.tolerance * (1.0 + self.cost().abs())
    }

    pub fn point(&self, updates_applied: usize) -> TrajectoryPoint {
        TrajectoryPoint {
            iter: self.iteration,
            cost: self.cost(),
            theorem1_gap: self.theorem1_gap(),
            lemma1_gap: self.lemma1_gap(),
            updates_applied,
        }
    }

    /// Replaces the scenario (e.g. after a topology change) together with a
    /// strategy valid for it, and recomputes the reference cost `D0`.
    pub fn reset(&mut self, scenario: Scenario, strategy: Strategy, restriction: Option<Restriction>) -> Result<()> {
        let restriction = restriction.unwrap_or_else(|| Restriction::free(&scenario));
        let iteration = self.iteration;
        let rng = self.rng.clone();
        *self = Self::with_restriction(scenario, strategy, self.config, restriction)?;
        self.iteration = iteration;
        self.rng = rng;
        Ok(())
    }

    /// Proposed new row from the given marginals, or `None` for rows that are
    /// not optimized.
    fn propose(
        &self,
        marginals: &MarginalState,
        blocked: &BlockedSets,
        hops: &Hops,
        k: usize,
        i: usize,
        class: FlowClass,
    ) -> Result<Option<Vec<f64>>> {
        let rule = self.restriction.rule(k, i, class);
        if matches!(rule, RowRule::Frozen)
            || (class == FlowClass::Result && i == self.scenario.tasks[k].dest)
        {
            return Ok(None);
        }
        let phi = self.strategy.row(k, i, class);
        let delta = &marginals.tasks[k].delta(class)[i];
        let full = blocked.row(k, i, class);
        // Blocking forbids increases: it pins options that carry nothing.
        let mut pinned: Vec<bool> = (0..phi.len()).map(|j| full[j] && phi[j] == 0.0).collect();
        if let RowRule::Allowed(mask) = rule {
            for (j, ok) in mask.iter().enumerate() {
                pinned[j] |= !ok;
            }
        }
        let diag = match self.config.scaling {
            Scaling::Gp { step } => vec![0.5 / step; phi.len()],
            Scaling::Sgp => scaling_matrix(
                &self.scenario,
                &self.bounds,
                hops,
                &self.flows,
                i,
                k,
                class,
                full,
                self.config.scaling_floor,
            ),
        };
        project_scaled(phi, delta, &diag, &pinned).map(Some)
    }

    /// Applies proposed rows, halving the step while the result is infeasible.
    /// Returns the number of rows that changed.
    fn apply(&mut self, proposals: Vec<((usize, usize, FlowClass), Vec<f64>)>) -> Result<usize> {
        let changed: Vec<_> = proposals
            .into_iter()
            .filter(|((k, i, c), v)| self.strategy.row(*k, *i, *c) != v.as_slice())
            .collect();
        if changed.is_empty() {
            return Ok(0);
        }
        let mut theta = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = self.strategy.clone();
            for ((k, i, c), v) in &changed {
                let row = cand.row_mut(*k, *i, *c);
                for (x, &target) in row.iter_mut().zip(v) {
                    *x += theta * (target - *x);
                }
                normalize_row(row);
            }
            let flows = evaluate_flows(&self.scenario, &cand)?;
            if flows.feasible {
                self.marginals = compute_marginals(&self.scenario, &cand, &flows)?;
                self.flows = flows;
                if self.config.refresh_reference {
                    self.bounds = curvature_bounds(&self.scenario, self.flows.cost);
                }
                self.strategy = cand;
                return Ok(changed.len());
            }
            theta *= 0.5;
        }
        Ok(0)
    }

    /// One synchronous iteration from a marginal snapshot of the current
    /// strategy.
    pub fn step_synchronous(&mut self) -> Result<usize> {
        let marginals = self.marginals.clone();
        self.step_with(&marginals, false)
    }

    /// One synchronous iteration from the given (possibly stale) marginals.
    /// With `guard`, row changes that would add a link closing a cycle in the
    /// current strategy are dropped, which stale marginals can otherwise cause.
    pub fn step_with(&mut self, marginals: &MarginalState, guard: bool) -> Result<usize> {
        let blocked = blocked_sets(&self.scenario, &self.strategy, marginals)?;
        let hops = hop_counts(&self.scenario, &self.strategy, &self.bounds)?;
        let mut proposals = Vec::new();
        for &(k, i, c) in &self.rows {
            if let Some(v) = self.propose(marginals, &blocked, &hops, k, i, c)? {
                proposals.push(((k, i, c), v));
            }
        }
        if guard {
            proposals = self.guard_cycles(proposals);
        }
        let n = self.apply(proposals)?;
        self.iteration += 1;
        Ok(n)
    }

    /// Drops proposed rows whose new positive options would close a cycle.
    fn guard_cycles(
        &self,
        proposals: Vec<((usize, usize, FlowClass), Vec<f64>)>,
    ) -> Vec<((usize, usize, FlowClass), Vec<f64>)> {
        let net = &self.scenario.network;
        let mut st = self.strategy.clone();
        let mut kept = Vec::with_capacity(proposals.len());
        for ((k, i, c), v) in proposals {
            let off = c.link_offset();
            let old = st.row(k, i, c).to_vec();
            let adds: Vec<usize> = net
                .out(i)
                .iter()
                .enumerate()
                .filter(|(p, _)| old[off + p] == 0.0 && v[off + p] > 0.0)
                .map(|(_, a)| a.node)
                .collect();
            *st.row_mut(k, i, c) = v.clone();
            if !adds.is_empty() && st.topological_order(net, k, c).is_err() {
                *st.row_mut(k, i, c) = old;
                continue;
            }
            kept.push(((k, i, c), v));
        }
        kept
    }

    /// Counts an iteration in which no row updates.
    pub fn idle(&mut self) {
        self.iteration += 1;
    }

    /// One asynchronous iteration: a single random row with fresh marginals.
    pub fn step_asynchronous(&mut self) -> Result<usize> {
        if self.rows.is_empty() {
            self.iteration += 1;
            return Ok(0);
        }
        let (k, i, c) = self.rows[self.rng.random_range(0..self.rows.len())];
        let blocked = blocked_sets(&self.scenario, &self.strategy, &self.marginals)?;
        let hops = hop_counts(&self.scenario, &self.strategy, &self.bounds)?;
        let marginals = self.marginals.clone();
        let proposals = match self.propose(&marginals, &blocked, &hops, k, i, c)? {
            Some(v) => vec![((k, i, c), v)],
            None => Vec::new(),
        };
        let n = self.apply(proposals)?;
        self.iteration += 1;
        Ok(n)
    }

    pub fn step(&mut self) -> Result<usize> {
        match self.config.schedule {
            Schedule::Synchronous => self.step_synchronous(),
            Schedule::Asynchronous { .. } => self.step_asynchronous(),
        }
    }

    /// Iterates until the gap tolerance or `max_iters` total iterations,
    /// calling `observe` after every iteration.
    pub fn run_with(
        &mut self,
        mut observe: impl FnMut(&Optimizer) -> Result<()>,
    ) -> Result<RunResult> {
        let mut trajectory = vec![self.point(0)];
        let termination = loop {
            if self.is_converged() {
                break Termination::Converged;
            }
            if self.iteration >= self.config.max_iters {
                break Termination::MaxIterations;
            }
            let n = self.step()?;
            observe(self)?;
            trajectory.push(self.point(n));
        };
        Ok(RunResult {
            strategy: self.strategy.clone(),
            trajectory,
            termination,
        })
    }

    pub fn run(&mut self) -> Result<RunResult> {
        self.run_with(|_| Ok(()))
    }
}

fn updatable_rows(scenario: &Scenario, restriction: &Restriction) -> Vec<(usize, usize, FlowClass)> {
    let mut rows = Vec::new();
    for (k, task) in scenario.tasks.iter().enumerate() {
        for i in 0..scenario.num_nodes() {
            for c in [FlowClass::Data, FlowClass::Result] {
                if c == FlowClass::Result && i == task.dest {
                    continue;
                }
                if matches!(restriction.rule(k, i, c), RowRule::Frozen) {
                    continue;
                }
                rows.push((k, i, c));
            }
        }
    }
    rows
}

/// Runs the optimizer from [`initial_strategy`].
pub fn run(scenario: &Scenario, config: &UpdateConfig) -> Result<RunResult> {
    let start = initial_strategy(scenario)?;
    Optimizer::new(scenario.clone(), start, *config)?.run()
}

/// Writes a trajectory as CSV with columns
/// `iter,cost,theorem1_gap,lemma1_gap,updates_applied`.
pub fn write_trajectory<W: std::io::Write>(out: W, points: &[TrajectoryPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::marginals::evaluate_all;
    use crate::model::LinkCost;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_examples() {
        let v = project_scaled(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0], &[false, false]).unwrap();
        assert!(close(&v, &[0.75, 0.25], 1e-15));
        let v = project_scaled(&[0.5, 0.5], &[0.0, 1.0], &[1000.0, 1000.0], &[false, false])
            .unwrap();
        assert!(close(&v, &[0.50025, 0.49975], 1e-15));
        let v = project_scaled(&[0.5, 0.5], &[3.0, -7.0], &[1.0, 1.0], &[false, true]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
        assert!(matches!(
            project_scaled(&[1.0], &[0.0], &[1.0], &[true]),
            Err(Error::NoFeasibleDirection)
        ));
    }

    #[test]
    fn projection_fixed_point() {
        // All mass already on the minimum.
        let v = project_scaled(&[1.0, 0.0, 0.0], &[1.0, 2.0, 3.0], &[1e-6; 3], &[false; 3]).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
        // Tiny scaling jumps straight to the minimum.
        let v = project_scaled(&[0.2, 0.3, 0.5], &[4.0, 2.0, 3.0], &[1e-6; 3], &[false; 3]).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn curvature_examples() {
        let s = fixtures::e1();
        let mut s2 = s.clone();
        s2.link_costs[0] = LinkCost::Queue(10.0);
        let b = curvature_bounds(&s2, 1.0);
        assert!((b.link[0] - 0.16).abs() < 1e-15);
        assert_eq!(b.link[1], 0.0);
        assert!((b.global - 0.16).abs() < 1e-15);
    }

    #[test]
    fn scaling_example() {
        let s = fixtures::e1();
        let st = fixtures::e1_optimal_strategy(&s);
        let fs = evaluate_flows(&s, &st).unwrap();
        let bounds = curvature_bounds(&s, fs.cost);
        let hops = hop_counts(&s, &st, &bounds).unwrap();
        // All-linear: every entry is the floor.
        let d = scaling_matrix(&s, &bounds, &hops, &fs, 0, 0, FlowClass::Data, &[false; 3], 1e-6);
        assert_eq!(d, vec![1e-6; 3]);
        // Queue-only numbers: t = 2, A = A_ij = 0.16, one unblocked neighbor at
        // one hop from the destination.
        let mut fs2 = fs.clone();
        fs2.tasks[0].t_result[0] = 2.0;
        let mut h2 = hops.clone();
        h2.result[0] = vec![1, 1, 0];
        let b2 = CurvatureBounds {
            d0: 1.0,
            link: vec![0.16; 6],
            global: 0.16,
            compute: vec![vec![0.0]; 3],
        };
        // Node 0's result options: 1 (unblocked, h = 1) and 2 (blocked).
        let d = scaling_matrix(&s, &b2, &h2, &fs2, 0, 0, FlowClass::Result, &[false, true], 1e-6);
        assert!((d[0] - 0.32).abs() < 1e-15, "{d:?}");
    }

    #[test]
    fn e1_blocked_sets() {
        let s = fixtures::e1();
        let st = fixtures::e1_optimal_strategy(&s);
        let (_, m) = evaluate_all(&s, &st).unwrap();
        let b = blocked_sets(&s, &st, &m).unwrap();
        // Node 1's data options: [local, ->0, ->2]; pr = [2.5, 1.5, 10].
        assert_eq!(b.data[0][1], vec![false, true, true]);
        // Node 0 may send to 1 (pr 1.5 < 2.5), not to 2 (pr 10).
        assert_eq!(b.data[0][0], vec![false, false, true]);
    }

    #[test]
    fn tags_propagate_backwards() {
        // Chain 0 -> 1 -> 2 -> 3 with reverse links. Node 1 splits between
        // cheap local computation and an expensive node 2, so 1 -> 2 is
        // improper.
        use crate::model::{ComputeCost, ComputeKind, Network, Task};
        let net = Network::from_undirected(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let s = Scenario {
            link_costs: vec![LinkCost::Linear(1.0); net.num_links()],
            compute: [1.0, 1.0, 50.0, 1.0]
                .iter()
                .map(|&c| ComputeCost { kind: ComputeKind::SumLinear, s: 1.0, c: vec![c] })
                .collect(),
            network: net,
            tasks: vec![Task { dest: 3, m: 0, a: 1.0, rates: vec![1.0, 0.0, 0.0, 0.0] }],
            seed: 0,
        };
        let n = &s.network;
        let mut st = Strategy::blank(&s);
        st.set_data_next(n, 0, 0, Some(1));
        let p12 = crate::strategy::position(n, 1, 2).unwrap();
        st.tasks[0].data[1][0] = 0.5;
        st.tasks[0].data[1][1 + p12] = 0.5;
        for i in 0..3 {
            st.set_result_next(n, 0, i, Some(i + 1));
        }
        let (_, m) = evaluate_all(&s, &st).unwrap();
        let pr = &m.tasks[0].pr;
        assert!(pr[2] >= pr[1], "{pr:?}");
        let b = blocked_sets(&s, &st, &m).unwrap();
        // Node 0 -> 1: node 1 carries an improper link, so it is tagged.
        let p = crate::strategy::position(n, 0, 1).unwrap();
        assert!(b.data[0][0][1 + p]);
    }

    #[test]
    fn e1_converges_from_local_start() {
        let s = fixtures::e1();
        let start = fixtures::e1_local_strategy(&s);
        let mut opt = Optimizer::new(s.clone(), start, UpdateConfig::default()).unwrap();
        let r = opt.run().unwrap();
        assert_eq!(r.termination, Termination::Converged);
        assert!((r.final_cost() - 2.5).abs() < 1e-3);
        assert!(r.final_gap() <= 1e-6);
    }

    #[test]
    fn e1_optimum_is_a_fixed_point() {
        let s = fixtures::e1();
        let start = fixtures::e1_optimal_strategy(&s);
        let mut opt = Optimizer::new(s, start.clone(), UpdateConfig::default()).unwrap();
        let r = opt.run().unwrap();
        assert_eq!(r.iterations(), 0);
        assert_eq!(r.strategy, start);
    }

    #[test]
    fn first_update_moves_toward_the_cheap_neighbor() {
        let s = fixtures::e1();
        let start = fixtures::e1_local_strategy(&s);
        let mut opt = Optimizer::new(s.clone(), start, UpdateConfig::default()).unwrap();
        opt.step().unwrap();
        let p = crate::strategy::position(&s.network, 0, 1).unwrap();
        assert!(opt.strategy().tasks[0].data[0][1 + p] > 0.0);
    }

    #[test]
    fn trajectory_csv_header() {
        let mut buf = Vec::new();
        write_trajectory(
            &mut buf,
            &[TrajectoryPoint { iter: 0, cost: 1.5, theorem1_gap: 0.0, lemma1_gap: 0.0, updates_applied: 0 }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iter,cost,theorem1_gap,lemma1_gap,updates_applied\n0,1.5,0.0,0.0,0\n"
        );
    }
}
