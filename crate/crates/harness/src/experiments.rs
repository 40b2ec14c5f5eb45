//! Experiment orchestration: algorithm comparisons, parameter sweeps and
//! node-failure runs, with their CSV/JSON records.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use cec_core::baselines::{solve, Algorithm, GP_STEP};
use cec_core::broadcast::{run_async_sim, AsyncConfig, DelayModel};
use cec_core::marginals::evaluate_all;
use cec_core::oracle::fw_solve;
use cec_core::paths::min_hop_to;
use cec_core::sgp::TrajectoryPoint;
use cec_core::{
    check_theorem1_gap, detect_loops, evaluate_flows, initial_strategy, validate_scenario, ComputeCost,
    LinkCost, Network, Optimizer, Scaling, Scenario, Schedule, Strategy, Task, UpdateConfig,
};

use crate::config::{ExperimentConfig, SweepSpec};
use crate::error::{HarnessError, Result};
use crate::metrics::travel_distance;
use crate::sampler::{sample_scenario, Sample};

/// How the optimizing algorithms (SGP and GP) exchange marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// All rows update every iteration from fresh marginals.
    Synchronous,
    /// One random row per iteration.
    Asynchronous,
    /// Simulated control messages with delays uniform in `[0, max_delay]`
    /// slots; rows update from the latest completed round.
    Broadcast { max_delay: f64 },
}

/// Hex SHA-256 of the scenario's JSON form.
pub fn scenario_hash(scenario: &Scenario) -> Result<String> {
    let text = scenario.to_json()?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

pub fn update_config(config: &ExperimentConfig, mode: Mode, seed: u64) -> UpdateConfig {
    UpdateConfig {
        max_iters: config.max_iters,
        tolerance: config.tolerance,
        schedule: match mode {
            Mode::Asynchronous => Schedule::Asynchronous { seed },
            _ => Schedule::Synchronous,
        },
        ..UpdateConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    /// Infinite (`null` in JSON) when the strategy overloads a resource or
    /// the algorithm failed.
    pub cost: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub theorem1_gap: Option<f64>,
    pub l_data: Option<f64>,
    pub l_result: Option<f64>,
    /// Control messages, counting one broadcast round per iteration of the
    /// optimizing algorithms.
    pub messages: Option<usize>,
    pub error: Option<String>,
    /// Strategy in its JSON form, for re-evaluation.
    pub strategy: Option<serde_json::Value>,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl AlgorithmRun {
    fn failed(algorithm: Algorithm, error: String) -> Self {
        AlgorithmRun {
            algorithm,
            cost: f64::INFINITY,
            feasible: false,
            iterations: 0,
            theorem1_gap: None,
            l_data: None,
            l_result: None,
            messages: None,
            error: Some(error),
            strategy: None,
            trajectory: Vec::new(),
        }
    }
}

fn round_messages(scenario: &Scenario) -> usize {
    2 * scenario.num_tasks() * scenario.num_links()
}

fn describe(scenario: &Scenario, algorithm: Algorithm, strategy: &Strategy) -> Result<AlgorithmRun> {
    let flows = evaluate_flows(scenario, strategy)?;
    let mut run = AlgorithmRun {
        algorithm,
        cost: flows.cost,
        feasible: flows.feasible,
        iterations: 0,
        theorem1_gap: None,
        l_data: None,
        l_result: None,
        messages: None,
        error: None,
        strategy: Some(serde_json::from_str(&strategy.to_json(&scenario.network)?)?),
        trajectory: Vec::new(),
    };
    if flows.feasible {
        let (_, marginals) = evaluate_all(scenario, strategy)?;
        run.theorem1_gap = Some(check_theorem1_gap(&marginals, strategy)?);
        let d = travel_distance(scenario, &flows);
        run.l_data = d.data;
        run.l_result = d.result;
    }
    Ok(run)
}

fn try_solve(scenario: &Scenario, algorithm: Algorithm, update: &UpdateConfig, mode: Mode) -> Result<AlgorithmRun> {
    let optimizing = matches!(algorithm, Algorithm::Sgp | Algorithm::Gp);
    if let (Mode::Broadcast { max_delay }, true) = (mode, optimizing) {
        let scaling = if algorithm == Algorithm::Gp { Scaling::Gp { step: GP_STEP } } else { Scaling::Sgp };
        let config = AsyncConfig {
            update: UpdateConfig { scaling, ..*update },
            delays: DelayModel::Uniform { max: max_delay, seed: scenario.seed },
        };
        let sim = run_async_sim(scenario, initial_strategy(scenario)?, &config)?;
        let mut run = describe(scenario, algorithm, &sim.run.strategy)?;
        run.iterations = sim.run.iterations();
        run.messages = Some(sim.messages);
        run.trajectory = sim.run.trajectory;
        return Ok(run);
    }
    let r = solve(algorithm, scenario, update)?;
    let mut run = describe(scenario, algorithm, &r.strategy)?;
    run.iterations = r.iterations;
    if optimizing {
        run.messages = Some(r.iterations * round_messages(scenario));
    }
    run.trajectory = r.trajectory;
    Ok(run)
}

/// Runs one algorithm; failures become an annotated run with infinite cost.
pub fn solve_one(scenario: &Scenario, algorithm: Algorithm, update: &UpdateConfig, mode: Mode) -> AlgorithmRun {
    try_solve(scenario, algorithm, update, mode).unwrap_or_else(|e| AlgorithmRun::failed(algorithm, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub label: String,
    pub seed: u64,
    pub scenario_hash: Option<String>,
    pub rate_factor: Option<f64>,
    pub error: Option<String>,
    pub runs: Vec<AlgorithmRun>,
}

pub fn compare_seed(config: &ExperimentConfig, seed: u64, mode: Mode) -> Result<(Sample, ExperimentRecord)> {
    let sample = sample_scenario(config, seed)?;
    let update = update_config(config, mode, seed);
    let runs = config
        .algorithms
        .iter()
        .map(|&a| solve_one(&sample.scenario, a, &update, mode))
        .collect();
    let record = ExperimentRecord {
        label: config.label.clone(),
        seed,
        scenario_hash: Some(scenario_hash(&sample.scenario)?),
        rate_factor: Some(sample.rate_factor),
        error: None,
        runs,
    };
    Ok((sample, record))
}

/// Every configured seed; a seed whose scenario cannot be built yields a
/// record carrying the error.
pub fn compare(config: &ExperimentConfig, mode: Mode) -> Vec<(Option<Sample>, ExperimentRecord)> {
    config
        .seeds
        .iter()
        .map(|&seed| match compare_seed(config, seed, mode) {
            Ok((s, r)) => (Some(s), r),
            Err(e) => (
                None,
                ExperimentRecord {
                    label: config.label.clone(),
                    seed,
                    scenario_hash: None,
                    rate_factor: None,
                    error: Some(e.to_string()),
                    runs: Vec::new(),
                },
            ),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarRow {
    pub label: String,
    pub seed: u64,
    pub scenario_hash: Option<String>,
    pub algorithm: Algorithm,
    pub cost: f64,
    /// Cost over the largest finite cost of the scenario; empty when the
    /// algorithm produced no finite cost.
    pub normalized: Option<f64>,
    pub feasible: bool,
    pub iterations: usize,
    pub theorem1_gap: Option<f64>,
    pub l_data: Option<f64>,
    pub l_result: Option<f64>,
    pub messages: Option<usize>,
    pub error: Option<String>,
}

/// Bar-chart rows: per scenario, costs normalized by the worst finite cost.
pub fn bars(records: &[ExperimentRecord]) -> Vec<BarRow> {
    let mut rows = Vec::new();
    for rec in records {
        let worst = rec.runs.iter().map(|r| r.cost).filter(|c| c.is_finite()).fold(f64::NAN, f64::max);
        for r in &rec.runs {
            let normalized = (r.cost.is_finite() && worst > 0.0).then(|| r.cost / worst);
            rows.push(BarRow {
                label: rec.label.clone(),
                seed: rec.seed,
                scenario_hash: rec.scenario_hash.clone(),
                algorithm: r.algorithm,
                cost: r.cost,
                normalized,
                feasible: r.feasible,
                iterations: r.iterations,
                theorem1_gap: r.theorem1_gap,
                l_data: r.l_data,
                l_result: r.l_result,
                messages: r.messages,
                error: r.error.clone(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub label: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub iter: usize,
    pub cost: f64,
    pub theorem1_gap: f64,
    pub lemma1_gap: f64,
    pub updates_applied: usize,
}

pub fn trajectory_rows(records: &[ExperimentRecord]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for rec in records {
        for r in &rec.runs {
            for p in &r.trajectory {
                rows.push(TrajectoryRow {
                    label: rec.label.clone(),
                    seed: rec.seed,
                    algorithm: r.algorithm,
                    iter: p.iter,
                    cost: p.cost,
                    theorem1_gap: p.theorem1_gap,
                    lemma1_gap: p.lemma1_gap,
                    updates_applied: p.updates_applied,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub seed: u64,
    pub kind: &'static str,
    pub value: f64,
    pub scenario_hash: String,
    pub algorithm: Algorithm,
    pub cost: f64,
    pub feasible: bool,
    pub l_data: Option<f64>,
    pub l_result: Option<f64>,
    pub error: Option<String>,
}

/// Applies one sweep grid point to a sampled scenario.
pub fn sweep_point(scenario: &Scenario, sweep: &SweepSpec, value: f64) -> Scenario {
    match sweep {
        SweepSpec::RateScale { .. } => scenario.scale_rates(value),
        SweepSpec::ResultRatio { .. } => {
            let mut s = scenario.clone();
            for t in &mut s.tasks {
                t.a = value;
            }
            s
        }
    }
}

fn sweep_grid(sweep: &SweepSpec) -> (&'static str, &[f64]) {
    match sweep {
        SweepSpec::RateScale { factors } => ("rate_scale", factors),
        SweepSpec::ResultRatio { values } => ("result_ratio", values),
    }
}

pub fn sweep(config: &ExperimentConfig, mode: Mode) -> Result<Vec<SweepRow>> {
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| HarnessError::Config("the configuration has no sweep".into()))?;
    let (kind, grid) = sweep_grid(spec);
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let base = sample_scenario(config, seed)?.scenario;
        let update = update_config(config, mode, seed);
        for &value in grid {
            let scenario = sweep_point(&base, spec, value);
            let hash = scenario_hash(&scenario)?;
            for &a in &config.algorithms {
                let r = solve_one(&scenario, a, &update, mode);
                rows.push(SweepRow {
                    label: config.label.clone(),
                    seed,
                    kind,
                    value,
                    scenario_hash: hash.clone(),
                    algorithm: a,
                    cost: r.cost,
                    feasible: r.feasible,
                    l_data: r.l_data,
                    l_result: r.l_result,
                    error: r.error,
                });
            }
        }
    }
    Ok(rows)
}

/// Ranks with ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` for fewer than two points, a NaN input
/// or a constant series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| v.is_nan()) {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Per seed, the Spearman correlation between the sweep value and
/// `cost(other) - cost(reference)`. Points where the reference has no finite
/// cost are skipped.
pub fn sweep_gap_trend(rows: &[SweepRow], reference: Algorithm, other: Algorithm) -> Vec<(u64, Option<f64>)> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    seeds
        .into_iter()
        .map(|seed| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for r in rows.iter().filter(|r| r.seed == seed && r.algorithm == reference && r.cost.is_finite()) {
                if let Some(o) = rows.iter().find(|o| o.seed == seed && o.algorithm == other && o.value == r.value) {
                    x.push(r.value);
                    y.push(o.cost - r.cost);
                }
            }
            (seed, spearman(&x, &y))
        })
        .collect()
}

/// Scenario with node `v` removed: its links, computation and input data
/// disappear, as do tasks destined to it or left without input. Node ids
/// above `v` shift down by one.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    pub scenario: Scenario,
    /// Original index of each kept task.
    pub tasks: Vec<usize>,
    pub removed: usize,
}

impl Reduced {
    /// New id of an original node.
    pub fn node(&self, old: usize) -> Option<usize> {
        match old.cmp(&self.removed) {
            std::cmp::Ordering::Less => Some(old),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(old - 1),
        }
    }
}

pub fn remove_node(scenario: &Scenario, v: usize) -> Result<Reduced> {
    let n = scenario.num_nodes();
    if v >= n {
        return Err(HarnessError::Config(format!("node {v} is outside 0..{n}")));
    }
    let map = |u: usize| if u < v { u } else { u - 1 };
    let mut links = Vec::new();
    let mut link_costs: Vec<LinkCost> = Vec::new();
    for (l, c) in scenario.network.links().iter().zip(&scenario.link_costs) {
        if l.from != v && l.to != v {
            links.push(cec_core::model::Link { from: map(l.from), to: map(l.to) });
            link_costs.push(*c);
        }
    }
    let network = Network::new(n - 1, links)?;
    let compute: Vec<ComputeCost> =
        scenario.compute.iter().enumerate().filter(|&(u, _)| u != v).map(|(_, c)| c.clone()).collect();
    let mut tasks = Vec::new();
    let mut kept = Vec::new();
    for (k, t) in scenario.tasks.iter().enumerate() {
        if t.dest == v {
            continue;
        }
        let rates: Vec<f64> = t.rates.iter().enumerate().filter(|&(u, _)| u != v).map(|(_, &r)| r).collect();
        if !(rates.iter().sum::<f64>() > 0.0) {
            continue;
        }
        tasks.push(Task { dest: map(t.dest), m: t.m, a: t.a, rates });
        kept.push(k);
    }
    if tasks.is_empty() {
        return Err(HarnessError::Config(format!("removing node {v} leaves no task")));
    }
    let reduced = Scenario { network, link_costs, compute, tasks, seed: scenario.seed };
    validate_scenario(&reduced).into_result()?;
    Ok(Reduced { scenario: reduced, tasks: kept, removed: v })
}

/// Carries a strategy over to the reduced scenario: options toward the
/// removed node are dropped and rows renormalized. Rows left empty compute
/// locally (data) or take a min-hop neighbor (results). Falls back to a fresh
/// initial strategy when the carried one loops or overloads a resource.
pub fn carry_strategy(old: &Scenario, strategy: &Strategy, reduced: &Reduced) -> Result<Strategy> {
    let s = &reduced.scenario;
    let net = &s.network;
    let mut st = Strategy::blank(s);
    for (k_new, &k_old) in reduced.tasks.iter().enumerate() {
        let hops = min_hop_to(net, s.tasks[k_new].dest);
        for u_old in 0..old.num_nodes() {
            let Some(u) = reduced.node(u_old) else { continue };
            let old_out = old.network.out(u_old);
            let mut data = vec![0.0; 1 + net.out(u).len()];
            data[0] = strategy.tasks[k_old].data[u_old][0];
            let mut result = vec![0.0; net.out(u).len()];
            for (p_old, a) in old_out.iter().enumerate() {
                let Some(w) = reduced.node(a.node) else { continue };
                let p = net.out(u).iter().position(|b| b.node == w).expect("kept links keep their endpoints");
                data[1 + p] = strategy.tasks[k_old].data[u_old][1 + p_old];
                if u != s.tasks[k_new].dest {
                    result[p] = strategy.tasks[k_old].result[u_old][p_old];
                }
            }
            let total: f64 = data.iter().sum();
            if total > 0.0 {
                data.iter_mut().for_each(|x| *x /= total);
            } else {
                data[0] = 1.0;
            }
            if u != s.tasks[k_new].dest {
                let total: f64 = result.iter().sum();
                if total > 0.0 {
                    result.iter_mut().for_each(|x| *x /= total);
                } else if let Some(w) = hops.next[u] {
                    let p = net.out(u).iter().position(|b| b.node == w).expect("tree edge");
                    result[p] = 1.0;
                }
            }
            st.tasks[k_new].data[u] = data;
            st.tasks[k_new].result[u] = result;
        }
    }
    if detect_loops(&st, net).is_loop_free() && evaluate_flows(s, &st)?.feasible {
        Ok(st)
    } else {
        Ok(initial_strategy(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailurePoint {
    pub iter: usize,
    /// `false` before the failure, `true` after.
    pub failed: bool,
    pub cost: f64,
    pub theorem1_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub label: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub node: usize,
    pub iteration: usize,
    pub scenario_hash: String,
    pub reduced_hash: String,
    pub cost_before: f64,
    pub final_cost: f64,
    pub final_gap: f64,
    pub converged: bool,
    /// Frank-Wolfe bounds on the reduced scenario.
    pub oracle_lower: f64,
    pub oracle_upper: f64,
    pub trajectory: Vec<FailurePoint>,
}

/// Runs SGP or GP, removes the configured node at the configured iteration
/// and continues on the reduced scenario until convergence or `max_iters`
/// further iterations.
pub fn failure_run(config: &ExperimentConfig, seed: u64, algorithm: Algorithm) -> Result<FailureRecord> {
    let spec = config
        .failure
        .ok_or_else(|| HarnessError::Config("the configuration has no failure".into()))?;
    let scaling = match algorithm {
        Algorithm::Sgp => Scaling::Sgp,
        Algorithm::Gp => Scaling::Gp { step: GP_STEP },
        other => return Err(HarnessError::Config(format!("{other} does not adapt to failures"))),
    };
    let scenario = sample_scenario(config, seed)?.scenario;
    let update = UpdateConfig { scaling, ..update_config(config, Mode::Synchronous, seed) };
    let mut opt = Optimizer::new(scenario.clone(), initial_strategy(&scenario)?, update)?;
    let point = |o: &Optimizer, failed| FailurePoint {
        iter: o.iteration(),
        failed,
        cost: o.cost(),
        theorem1_gap: o.theorem1_gap(),
    };
    let mut trajectory = vec![point(&opt, false)];
    while opt.iteration() < spec.iteration {
        opt.step()?;
        trajectory.push(point(&opt, false));
    }
    let cost_before = opt.cost();

    let reduced = remove_node(&scenario, spec.node)?;
    let carried = carry_strategy(&scenario, opt.strategy(), &reduced)?;
    opt.reset(reduced.scenario.clone(), carried, None)?;
    trajectory.push(point(&opt, true));
    let stop = spec.iteration + config.max_iters;
    while !opt.is_converged() && opt.iteration() < stop {
        opt.step()?;
        trajectory.push(point(&opt, true));
    }
    let fw = fw_solve(&reduced.scenario, 1e-7, 20_000)?;
    Ok(FailureRecord {
        label: config.label.clone(),
        seed,
        algorithm,
        node: spec.node,
        iteration: spec.iteration,
        scenario_hash: scenario_hash(&scenario)?,
        reduced_hash: scenario_hash(&reduced.scenario)?,
        cost_before,
        final_cost: opt.cost(),
        final_gap: opt.theorem1_gap(),
        converged: opt.is_converged(),
        oracle_lower: fw.certificate.lower_bound,
        oracle_upper: fw.certificate.upper_bound,
        trajectory,
    })
}

/// Writes to a sibling temporary file, then renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
