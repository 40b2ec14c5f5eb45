//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status when any criterion fails. Pass criterion numbers as
//! arguments to run a subset.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cec_core::baselines::{solve, solve_observed, Algorithm};
use cec_core::broadcast::{run_async_sim, run_round, AsyncConfig, DelayModel};
use cec_core::flow::conservation_residual;
use cec_core::marginals::{finite_difference_marginal, Perturbation};
use cec_core::oracle::{brute_force_small, fw_solve};
use cec_core::{
    check_lemma1_gap, check_theorem1_gap, compute_marginals, detect_loops, evaluate_flows, fixtures,
    initial_strategy, ComputeKind, Error, FlowClass, Optimizer, Scenario, Schedule, Strategy, UpdateConfig,
};
use cec_harness::config::{FailureSpec, LinkFamily, SweepSpec};
use cec_harness::experiments::{bars, compare_seed, failure_run, remove_node, sweep, sweep_gap_trend};
use cec_harness::{sample_scenario, ExperimentConfig, Mode};

struct Verdict {
    pass: bool,
    detail: String,
}

type Check<'a> = Box<dyn Fn() -> Result<Verdict> + 'a>;

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

/// Small Queue family: 6 to 10 nodes, 1 to 3 tasks.
fn small_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset("connected-er").expect("preset exists");
    c.topology.nodes = Some(6 + seed as usize % 5);
    c.topology.p = Some(0.3);
    c.tasks = 1 + seed as usize % 3;
    c.sources_per_task = 2;
    c.max_utilization = Some(0.6);
    c.seeds = vec![seed];
    c.max_iters = 20_000;
    c
}

fn small_queue(seed: u64) -> Result<Scenario> {
    Ok(sample_scenario(&small_config(seed), seed)?.scenario)
}

fn sync_config() -> UpdateConfig {
    UpdateConfig { max_iters: 20_000, ..Default::default() }
}

/// Scenarios with 5 to 12 nodes cycling through the four cost-family pairs.
fn mixed_scenario(i: u64) -> Result<Scenario> {
    let seed = 100 + i;
    let mut c = small_config(seed);
    c.topology.nodes = Some(5 + i as usize % 8);
    c.link_cost = if i % 2 == 0 { LinkFamily::Queue } else { LinkFamily::Linear };
    c.compute_cost = if i / 2 % 2 == 0 { ComputeKind::SumQueue } else { ComputeKind::SumLinear };
    c.max_utilization = Some(0.3);
    Ok(sample_scenario(&c, seed)?.scenario)
}

fn random_row(allowed: &[bool], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<f64> = allowed
        .iter()
        .map(|&ok| if ok && rng.random_bool(0.6) { rng.random::<f64>() + 0.05 } else { 0.0 })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let options: Vec<usize> = (0..allowed.len()).filter(|&p| allowed[p]).collect();
        w[options[rng.random_range(0..options.len())]] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Random loop-free strategy: data only moves down a random order that ends
/// at the destination and results only move closer to it.
fn random_strategy(s: &Scenario, rng: &mut ChaCha8Rng) -> Strategy {
    let net = &s.network;
    let mut st = Strategy::blank(s);
    for (k, task) in s.tasks.iter().enumerate() {
        let dist = net.hops_to(task.dest);
        let key: Vec<(usize, f64)> = dist.iter().map(|&d| (d, rng.random::<f64>())).collect();
        let later = |i: usize, j: usize| key[j].0 < key[i].0 || (key[j].0 == key[i].0 && key[j].1 < key[i].1);
        for i in 0..s.num_nodes() {
            let out = net.out(i);
            let data: Vec<bool> = std::iter::once(true).chain(out.iter().map(|a| later(i, a.node))).collect();
            *st.row_mut(k, i, FlowClass::Data) = random_row(&data, rng);
            if i != task.dest {
                let result: Vec<bool> = out.iter().map(|a| dist[a.node] < dist[i]).collect();
                *st.row_mut(k, i, FlowClass::Result) = random_row(&result, rng);
            }
        }
    }
    st
}

/// Five random strategies on each of ten mixed scenarios. Input rates are
/// halved until the strategy overloads no queue.
fn gradient_cases() -> Result<Vec<(Scenario, Strategy)>> {
    let mut cases = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..10 {
        let base = mixed_scenario(i)?;
        for _ in 0..5 {
            let st = random_strategy(&base, &mut rng);
            st.validate(&base)?;
            ensure!(detect_loops(&st, &base.network).is_loop_free(), "random strategy has a loop");
            let mut s = base.clone();
            while !evaluate_flows(&s, &st)?.feasible {
                s = s.scale_rates(0.5);
            }
            cases.push((s, st));
        }
    }
    Ok(cases)
}

fn criterion_1(cases: &[(Scenario, Strategy)]) -> Result<Verdict> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (s, st) in cases {
        let flows = evaluate_flows(s, st)?;
        let m = compute_marginals(s, st, &flows)?;
        for (k, tm) in m.tasks.iter().enumerate() {
            for i in 0..s.num_nodes() {
                for (which, value) in [(Perturbation::Input, tm.pr[i]), (Perturbation::Result, tm.pt[i])] {
                    let fd = finite_difference_marginal(s, st, i, k, which, 1e-5)?;
                    let err = (value - fd).abs() / fd.abs().max(1e-3);
                    worst = worst.max(err);
                    checked += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-5, format!("{checked} marginals on {} strategies, worst rel. err {worst:.2e}", cases.len()))
}

fn criterion_2(cases: &[(Scenario, Strategy)]) -> Result<Verdict> {
    let mut worst = 0.0f64;
    for (s, st) in cases {
        let flows = evaluate_flows(s, st)?;
        let m = compute_marginals(s, st, &flows)?;
        let lhs: f64 = s
            .tasks
            .iter()
            .zip(&m.tasks)
            .map(|(t, tm)| t.rates.iter().zip(&tm.pr).map(|(r, p)| r * p).sum::<f64>())
            .sum();
        let links: f64 = flows.link_eval.iter().zip(&flows.link_flow).map(|(e, f)| e.first * f).sum();
        let compute: f64 = flows
            .comp_grad
            .iter()
            .zip(&flows.comp_load)
            .map(|(g, load)| g.iter().zip(load).map(|(g, x)| g * x).sum::<f64>())
            .sum();
        worst = worst.max((lhs - links - compute).abs());
    }
    verdict(worst <= 1e-8, format!("worst residual {worst:.2e} over {} strategies", cases.len()))
}

fn criterion_3() -> Result<Verdict> {
    let mut bad = Vec::new();
    let mut worst_excess = 0.0f64;
    for seed in 0..20 {
        let s = small_queue(seed)?;
        let r = solve(Algorithm::Sgp, &s, &sync_config())?;
        let gap = r.trajectory.last().map_or(f64::INFINITY, |p| p.theorem1_gap);
        let lb = fw_solve(&s, 1e-7, 20_000)?.certificate.lower_bound;
        let excess = (r.cost - lb) / lb;
        worst_excess = worst_excess.max(excess);
        if !(gap <= 1e-6 * (1.0 + r.cost) && excess <= 5e-3) {
            bad.push(seed);
        }
    }
    let e1 = solve(Algorithm::Sgp, &fixtures::e1(), &sync_config())?.cost;
    let e1_ok = (e1 - 2.5).abs() <= 1e-3;
    verdict(
        bad.is_empty() && e1_ok,
        format!("20 seeds, worst excess over the FW lower bound {worst_excess:.2e}, failing seeds {bad:?}; E1 cost {e1:.6}"),
    )
}

fn criterion_4() -> Result<Verdict> {
    let s = fixtures::f3();
    let st = fixtures::f3_stationary_strategy(&s);
    let flows = evaluate_flows(&s, &st)?;
    let m = compute_marginals(&s, &st, &flows)?;
    let lemma = check_lemma1_gap(&m, &st)?;
    let theorem = check_theorem1_gap(&m, &st)?;
    let (best, _) = brute_force_small(&s, 0.5)?;
    let excess = (flows.cost - best) / best;
    verdict(
        lemma <= 1e-9 && theorem > 1e-3 && excess > 0.01,
        format!("Lemma-1 gap {lemma:.1e}, Theorem-1 gap {theorem:.3}, cost {} vs brute force {best} (+{:.0}%)", flows.cost, 100.0 * excess),
    )
}

fn criterion_5() -> Result<Verdict> {
    let config = UpdateConfig { max_iters: 5000, ..Default::default() };
    let mut iterations = 0usize;
    let mut loops = 0usize;
    let mut worst = 0.0f64;
    let mut skipped = Vec::new();
    for seed in 0..20 {
        let s = small_queue(seed)?;
        for a in Algorithm::ALL {
            let mut observe = |o: &Optimizer| {
                iterations += 1;
                if !detect_loops(o.strategy(), &o.scenario().network).is_loop_free() {
                    loops += 1;
                }
                worst = worst.max(conservation_residual(o.scenario(), o.flows()));
                Ok(())
            };
            match solve_observed(a, &s, &config, &mut observe) {
                Ok(r) => {
                    if !detect_loops(&r.strategy, &s.network).is_loop_free() {
                        loops += 1;
                    }
                    worst = worst.max(conservation_residual(&s, &evaluate_flows(&s, &r.strategy)?));
                }
                Err(Error::NoFeasibleStart(_)) => skipped.push(format!("{a}@{seed}")),
                Err(e) => return Err(e.into()),
            }
        }
    }
    verdict(
        loops == 0 && worst <= 1e-9,
        format!("{iterations} iterations, {loops} with loops, worst residual {worst:.1e}; no feasible start: {skipped:?}"),
    )
}

fn criterion_6() -> Result<Verdict> {
    let mut worst_async = 0.0f64;
    let mut worst_broadcast = 0.0f64;
    for seed in 0..20 {
        let s = small_queue(seed)?;
        let sync = solve(Algorithm::Sgp, &s, &sync_config())?.cost;
        let asynchronous = UpdateConfig { max_iters: 400_000, schedule: Schedule::Asynchronous { seed }, ..Default::default() };
        let a = solve(Algorithm::Sgp, &s, &asynchronous)?.cost;
        let delays = DelayModel::Uniform { max: 2.0, seed };
        let b = run_async_sim(&s, initial_strategy(&s)?, &AsyncConfig { update: sync_config(), delays })?
            .run
            .final_cost();
        worst_async = worst_async.max((a - sync).abs() / sync);
        worst_broadcast = worst_broadcast.max((b - sync).abs() / sync);
    }
    verdict(
        worst_async <= 1e-3 && worst_broadcast <= 1e-3,
        format!("worst rel. difference: single-row {worst_async:.1e}, broadcast with delays <= 2 slots {worst_broadcast:.1e}"),
    )
}

fn criterion_7() -> Result<Verdict> {
    let mut cases = vec![("E1".to_string(), fixtures::e1())];
    for seed in 0..5 {
        cases.push((format!("seed {seed}"), small_queue(seed)?));
    }
    let mut counts = Vec::new();
    let mut pass = true;
    for (name, s) in &cases {
        let st = initial_strategy(s)?;
        let flows = evaluate_flows(s, &st)?;
        let round = run_round(s, &st, &flows, &mut DelayModel::Uniform { max: 1.0, seed: 3 }.sampler(), false)?;
        let expected = 2 * s.num_tasks() * s.num_links();
        let bound = 2 * s.num_tasks() * s.network.max_out_degree();
        let central = compute_marginals(s, &st, &flows)?;
        pass &= round.messages == expected
            && round.sends.iter().all(|&n| n <= bound)
            && round.marginals == central;
        counts.push(format!("{name} {}/{expected}", round.messages));
    }
    pass &= counts[0] == "E1 12/12";
    verdict(pass, format!("messages/2|S||E|: {}", counts.join(", ")))
}

fn criterion_8() -> Result<Verdict> {
    let baselines = [Algorithm::Spoo, Algorithm::Lcor, Algorithm::Lpr];
    let mut instances = 0;
    let mut violations = Vec::new();
    let mut infeasible = 0;
    let (mut sgp_bars, mut lpr_bars) = (Vec::new(), Vec::new());
    for label in ExperimentConfig::PRESETS {
        let mut c = ExperimentConfig::desk(label)?;
        c.algorithms = vec![Algorithm::Sgp, Algorithm::Spoo, Algorithm::Lcor, Algorithm::Lpr];
        for seed in c.seeds.clone() {
            let (_, rec) = compare_seed(&c, seed, Mode::Synchronous)?;
            instances += 1;
            let cost = |a: Algorithm| rec.runs.iter().find(|r| r.algorithm == a).map_or(f64::INFINITY, |r| r.cost);
            let sgp = cost(Algorithm::Sgp);
            for b in baselines {
                let other = cost(b);
                if other.is_infinite() {
                    infeasible += 1;
                }
                if !(sgp.is_finite() && sgp <= other * (1.0 + 1e-9)) {
                    violations.push(format!("{label}/{seed}: {b} {other:.4} < SGP {sgp:.4}"));
                }
            }
            if c.link_cost == LinkFamily::Queue {
                let rows = bars(std::slice::from_ref(&rec));
                let bar = |a: Algorithm| rows.iter().find(|r| r.algorithm == a).and_then(|r| r.normalized);
                if let (Some(s), Some(l)) = (bar(Algorithm::Sgp), bar(Algorithm::Lpr)) {
                    sgp_bars.push(s);
                    lpr_bars.push(l);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ms, ml) = (mean(&sgp_bars), mean(&lpr_bars));
    verdict(
        violations.is_empty() && !sgp_bars.is_empty() && ms < ml,
        format!(
            "{instances} instances, {infeasible} infeasible baseline runs, violations {violations:?}; Queue mean bars SGP {ms:.3} vs LPR {ml:.3} over {} instances",
            sgp_bars.len()
        ),
    )
}

fn criterion_9() -> Result<Verdict> {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let s = small_queue(seed)?;
        let to_gap = |a| -> Result<Option<usize>> {
            let r = solve(a, &s, &sync_config())?;
            let last = r.trajectory.last().expect("trajectory has a start point");
            Ok((last.theorem1_gap <= 1e-6 * (1.0 + last.cost)).then_some(r.iterations))
        };
        let (sgp, gp) = (to_gap(Algorithm::Sgp)?, to_gap(Algorithm::Gp)?);
        let sgp_first = match (sgp, gp) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        wins += usize::from(sgp_first);
        let show = |x: Option<usize>| x.map_or("-".into(), |v| v.to_string());
        pairs.push(format!("{}/{}", show(sgp), show(gp)));
    }
    verdict(wins >= 8, format!("SGP no slower on {wins}/10; iterations SGP/GP {}", pairs.join(" ")))
}

fn failure_config() -> ExperimentConfig {
    let mut c = small_config(0);
    c.topology.nodes = Some(10);
    c.tasks = 3;
    c
}

/// The strongest computation node that is not a destination and whose
/// removal keeps the network strongly connected.
fn designated_node(s: &Scenario) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for v in 0..s.num_nodes() {
        if s.tasks.iter().any(|t| t.dest == v) {
            continue;
        }
        let Ok(reduced) = remove_node(s, v) else { continue };
        if reduced.scenario.network.is_strongly_connected() && best.is_none_or(|(cap, _)| s.compute[v].s > cap) {
            best = Some((s.compute[v].s, v));
        }
    }
    best.map(|(_, v)| v).context("no node can fail")
}

fn criterion_10() -> Result<Verdict> {
    let mut c = failure_config();
    let seed = c.seeds[0];
    let node = designated_node(&sample_scenario(&c, seed)?.scenario)?;
    c.failure = Some(FailureSpec { node, iteration: 100 });
    let r = failure_run(&c, seed, Algorithm::Sgp)?;
    let excess = (r.final_cost - r.oracle_lower) / r.oracle_lower;
    verdict(
        r.converged && excess <= 0.01,
        format!(
            "node {node} fails at iteration 100 (cost {:.4}); re-converged {} at cost {:.6}, {excess:.1e} above the FW lower bound",
            r.cost_before, r.converged, r.final_cost
        ),
    )
}

fn criterion_11() -> Result<Verdict> {
    let mut c = ExperimentConfig::desk("connected-er")?;
    c.max_iters = 5000;
    c.seeds = vec![0, 1, 2];
    c.algorithms = vec![Algorithm::Sgp, Algorithm::Lpr];
    c.sweep = Some(SweepSpec::RateScale { factors: vec![0.5, 1.0, 1.5, 2.0] });
    let trend = sweep_gap_trend(&sweep(&c, Mode::Synchronous)?, Algorithm::Sgp, Algorithm::Lpr);
    let rho_ok = trend.iter().all(|(_, rho)| rho.is_some_and(|r| r >= 0.0));

    c.seeds = vec![0];
    c.algorithms = vec![Algorithm::Sgp];
    c.sweep = Some(SweepSpec::ResultRatio { values: vec![0.1, 0.5, 1.0, 2.0, 5.0] });
    let l_data: Vec<f64> = sweep(&c, Mode::Synchronous)?
        .iter()
        .map(|r| r.l_data.unwrap_or(f64::NAN))
        .collect();
    let monotone = l_data.len() == 5 && l_data.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    let rhos: Vec<String> = trend
        .iter()
        .map(|(seed, rho)| format!("{seed}:{}", rho.map_or("-".into(), |r| format!("{r:.2}"))))
        .collect();
    let ls: Vec<String> = l_data.iter().map(|l| format!("{l:.3}")).collect();
    verdict(
        rho_ok && monotone,
        format!("rate-scale Spearman per seed {}; L_data over a_m grid {}", rhos.join(" "), ls.join(" ")),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_cec"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .stdout(std::process::Stdio::null())
        .status()?;
    ensure!(status.success(), "cec {args:?} failed");
    Ok(())
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            files.extend(csv_files(&path)?);
        } else if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            files.push((name, std::fs::read(&path)?));
        }
    }
    files.sort();
    Ok(files)
}

fn criterion_12() -> Result<Verdict> {
    let tmp = tempfile::tempdir()?;
    let mut c = ExperimentConfig::desk("abilene")?;
    c.seeds = vec![2];
    c.algorithms = vec![Algorithm::Sgp];
    c.max_iters = 300;
    c.sweep = Some(SweepSpec::ResultRatio { values: vec![0.5, 2.0] });
    let config = tmp.path().join("sweep.json");
    std::fs::write(&config, c.to_json()?)?;
    let config = config.to_string_lossy().into_owned();

    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        run_cli(&out.join("compare"), &["compare", "--preset", "abilene", "--desk", "--seed", "2", "--algo", "sgp,spoo,lcor,lpr", "--max-iters", "300"])?;
        run_cli(&out.join("broadcast"), &["compare", "--preset", "connected-er", "--desk", "--seed", "1", "--algo", "sgp", "--max-iters", "300", "--delay", "1"])?;
        run_cli(&out.join("sweep"), &["sweep", "--config", &config])?;
        outputs.push(csv_files(&out)?);
    }
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    verdict(
        outputs[0] == outputs[1] && names.len() == 5,
        format!("{} CSV files compared byte for byte: {}", names.len(), names.join(", ")),
    )
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| only.is_empty() || only.contains(&n);
    let cases = if selected(1) || selected(2) { gradient_cases() } else { Ok(Vec::new()) };
    let criteria: [(&str, Check<'_>); 12] = [
        ("gradient correctness", Box::new(|| criterion_1(cases.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?))),
        ("cost identity", Box::new(|| criterion_2(cases.as_ref().map_err(|e| anyhow::anyhow!("{e:#}"))?))),
        ("global optimality at desk scale", Box::new(criterion_3)),
        ("stationary but not optimal", Box::new(criterion_4)),
        ("loop freedom and conservation", Box::new(criterion_5)),
        ("asynchrony", Box::new(criterion_6)),
        ("message accounting", Box::new(criterion_7)),
        ("baseline dominance", Box::new(criterion_8)),
        ("convergence speed", Box::new(criterion_9)),
        ("adaptivity to node failure", Box::new(criterion_10)),
        ("trends", Box::new(criterion_11)),
        ("determinism", Box::new(criterion_12)),
    ];
    let limits = [(1, 10.0), (3, 60.0)];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let in_time = limits.iter().all(|&(c, limit)| c != n || secs < limit);
        let (pass, detail) = match outcome {
            Ok(v) => (v.pass && in_time, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!("criterion {n:>2} {name}: {} ({detail}; {secs:.1}s)", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
