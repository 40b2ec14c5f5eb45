use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cec_core::baselines::Algorithm;
use cec_core::broadcast::{run_round, write_trace, DelayModel};
use cec_core::oracle::{fw_solve, Certificate};
use cec_core::{evaluate_flows, Scenario, Strategy};
use cec_harness::experiments::{
    bars, compare, failure_run, scenario_hash, solve_one, sweep, trajectory_rows, update_config, write_atomic,
    write_csv, write_json, ExperimentRecord,
};
use cec_harness::{sample_scenario, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "cec", version, about = "Joint routing and offloading experiments for collaborative edge networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a scenario and write it with its topology.
    Generate(Common),
    /// Run one algorithm on one scenario.
    Solve(SolveArgs),
    /// Run the algorithm suite on every seed and write normalized bars.
    Compare(Common),
    /// Run the configured rate-scale or result-ratio sweep.
    Sweep(Common),
    /// Bound the optimality gap of a stored strategy with the Frank-Wolfe oracle.
    Certify(CertifyArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration label, e.g. connected-er or sw-queue.
    #[arg(long)]
    preset: Option<String>,
    /// Use the reduced-size variant of the preset.
    #[arg(long, requires = "preset")]
    desk: bool,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated algorithms (sgp, gp, spoo, lcor, lpr).
    #[arg(long, value_delimiter = ',')]
    algo: Vec<Algorithm>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Update one random row per iteration instead of all rows.
    #[arg(long = "async", conflicts_with = "delay")]
    asynchronous: bool,
    /// Simulate control messages with delays uniform in [0, DELAY] slots.
    #[arg(long)]
    delay: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Solve this scenario file instead of sampling one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Also write the control messages of one broadcast round at the
    /// returned strategy as JSON lines.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    strategy: PathBuf,
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            (None, Some(label)) if self.desk => ExperimentConfig::desk(label)?,
            (None, Some(label)) => ExperimentConfig::preset(label)?,
            (None, None) => bail!("pass --config or --preset"),
        };
        if let Some(seed) = self.seed {
            c.seeds = vec![seed];
        }
        if !self.algo.is_empty() {
            c.algorithms = self.algo.clone();
        }
        if let Some(t) = self.tolerance {
            c.tolerance = t;
        }
        if let Some(m) = self.max_iters {
            c.max_iters = m;
        }
        c.validate()?;
        Ok(c)
    }

    fn mode(&self) -> Mode {
        match (self.asynchronous, self.delay) {
            (true, _) => Mode::Asynchronous,
            (false, Some(max_delay)) => Mode::Broadcast { max_delay },
            (false, None) => Mode::Synchronous,
        }
    }
}

#[derive(Serialize)]
struct Records<'a> {
    config: &'a ExperimentConfig,
    records: &'a [ExperimentRecord],
}

#[derive(Serialize)]
struct TopologyDoc<'a> {
    labels: &'a [String],
    edges: &'a [(usize, usize)],
}

fn generate(args: &Common) -> Result<()> {
    let c = args.config()?;
    for &seed in &c.seeds {
        let s = sample_scenario(&c, seed)?;
        let stem = format!("{}_{seed}", c.label);
        write_atomic(&args.out.join(format!("{stem}.scenario.json")), s.scenario.to_json()?.as_bytes())?;
        write_json(
            &args.out.join(format!("{stem}.topology.json")),
            &TopologyDoc { labels: &s.topology.labels, edges: &s.topology.edges },
        )?;
        println!("{stem}: {} nodes, {} links, {} tasks", s.scenario.num_nodes(), s.scenario.num_links(), s.scenario.num_tasks());
    }
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    let common = &args.common;
    let c = common.config()?;
    let seed = c.seeds[0];
    let scenario = match &args.scenario {
        Some(path) => Scenario::from_json(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => sample_scenario(&c, seed)?.scenario,
    };
    let &[algorithm] = c.algorithms.as_slice() else {
        bail!("solve runs exactly one algorithm; pass --algo");
    };
    let mode = common.mode();
    let run = solve_one(&scenario, algorithm, &update_config(&c, mode, seed), mode);
    let record = ExperimentRecord {
        label: c.label.clone(),
        seed,
        scenario_hash: Some(scenario_hash(&scenario)?),
        rate_factor: None,
        error: None,
        runs: vec![run],
    };
    let out = &common.out;
    write_atomic(&out.join("scenario.json"), scenario.to_json()?.as_bytes())?;
    write_json(&out.join("record.json"), &Records { config: &c, records: std::slice::from_ref(&record) })?;
    write_csv(&out.join("trajectory.csv"), &trajectory_rows(std::slice::from_ref(&record)))?;
    let run = &record.runs[0];
    if let Some(st) = &run.strategy {
        write_json(&out.join("strategy.json"), st)?;
        if args.trace {
            let st = Strategy::from_json(&st.to_string(), &scenario)?;
            let flows = evaluate_flows(&scenario, &st)?;
            let delays = DelayModel::Uniform { max: common.delay.unwrap_or(1.0), seed };
            let round = run_round(&scenario, &st, &flows, &mut delays.sampler(), true)?;
            let mut buf = Vec::new();
            write_trace(&mut buf, &round.events)?;
            write_atomic(&out.join("trace.jsonl"), &buf)?;
        }
    }
    match &run.error {
        Some(e) => println!("{algorithm}: failed: {e}"),
        None => println!("{algorithm}: cost {} after {} iterations", run.cost, run.iterations),
    }
    Ok(())
}

fn compare_cmd(args: &Common) -> Result<()> {
    let c = args.config()?;
    let results = compare(&c, args.mode());
    let records: Vec<ExperimentRecord> = results.iter().map(|(_, r)| r.clone()).collect();
    for (sample, rec) in &results {
        if let Some(s) = sample {
            let path = args.out.join("scenarios").join(format!("{}_{}.json", c.label, rec.seed));
            write_atomic(&path, s.scenario.to_json()?.as_bytes())?;
        }
    }
    write_json(&args.out.join("records.json"), &Records { config: &c, records: &records })?;
    let rows = bars(&records);
    write_csv(&args.out.join("bars.csv"), &rows)?;
    write_csv(&args.out.join("trajectories.csv"), &trajectory_rows(&records))?;
    for r in &rows {
        println!(
            "{} seed {} {}: cost {} normalized {}",
            r.label,
            r.seed,
            r.algorithm,
            r.cost,
            r.normalized.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
    }
    if c.failure.is_some() {
        let mut failures = Vec::new();
        for &seed in &c.seeds {
            for &a in c.algorithms.iter().filter(|a| matches!(a, Algorithm::Sgp | Algorithm::Gp)) {
                failures.push(failure_run(&c, seed, a)?);
            }
        }
        write_json(&args.out.join("failure.json"), &failures)?;
        let points: Vec<_> = failures
            .iter()
            .flat_map(|f| f.trajectory.iter().map(move |p| (f.seed, f.algorithm, p)))
            .map(|(seed, algorithm, p)| FailureRow {
                seed,
                algorithm,
                iter: p.iter,
                failed: p.failed,
                cost: p.cost,
                theorem1_gap: p.theorem1_gap,
            })
            .collect();
        write_csv(&args.out.join("failure.csv"), &points)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FailureRow {
    seed: u64,
    algorithm: Algorithm,
    iter: usize,
    failed: bool,
    cost: f64,
    theorem1_gap: f64,
}

fn sweep_cmd(args: &Common) -> Result<()> {
    let c = args.config()?;
    let rows = sweep(&c, args.mode())?;
    write_csv(&args.out.join("sweep.csv"), &rows)?;
    write_json(&args.out.join("sweep_config.json"), &c)?;
    for r in &rows {
        println!("{} seed {} {}={} {}: cost {}", r.label, r.seed, r.kind, r.value, r.algorithm, r.cost);
    }
    Ok(())
}

#[derive(Serialize)]
struct CertifyDoc {
    #[serde(flatten)]
    certificate: Certificate,
    scenario_hash: String,
    strategy_cost: f64,
    /// `(strategy_cost - lower_bound) / lower_bound`.
    relative_excess: f64,
}

fn certify(args: &CertifyArgs) -> Result<()> {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let scenario = Scenario::from_json(&read(&args.scenario)?)?;
    let strategy = Strategy::from_json(&read(&args.strategy)?, &scenario)?;
    let cost = evaluate_flows(&scenario, &strategy)?.cost;
    let fw = fw_solve(&scenario, args.tolerance, args.max_iters)?;
    let lb = fw.certificate.lower_bound;
    let doc = CertifyDoc {
        certificate: fw.certificate,
        scenario_hash: scenario_hash(&scenario)?,
        strategy_cost: cost,
        relative_excess: (cost - lb) / lb.abs().max(f64::MIN_POSITIVE),
    };
    write_json(&args.out.join("certificate.json"), &doc)?;
    println!(
        "strategy cost {cost}, lower bound {lb}, upper bound {}, relative excess {:.3e}",
        fw.certificate.upper_bound, doc.relative_excess
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => generate(&a),
        Command::Solve(a) => solve(&a),
        Command::Compare(a) => compare_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Certify(a) => certify(&a),
    }
}
