use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cec_core::baselines::{solve, Algorithm};
use cec_core::broadcast::{run_round, DelayModel};
use cec_core::oracle::fw_solve;
use cec_core::{
    compute_marginals, detect_loops, evaluate_flows, fixtures, initial_strategy, validate_scenario, ComputeCost,
    ComputeKind, LinkCost, Network, Optimizer, Scenario, Strategy, Task, UpdateConfig,
};

/// Ring with random chords, queueing links and Sum-Queue nodes, two
/// computation types and one to three lightly loaded tasks.
fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..10);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for u in 0..n {
        for v in u + 2..n {
            if (u, v) != (0, n - 1) && rng.random_bool(0.25) {
                edges.push((u, v));
            }
        }
    }
    let network = Network::from_undirected(n, &edges).unwrap();
    let mut link_costs = vec![LinkCost::Queue(1.0); network.num_links()];
    for (u, v) in edges {
        let d = rng.random_range(10.0..30.0);
        link_costs[network.find_link(u, v).unwrap()] = LinkCost::Queue(d);
        link_costs[network.find_link(v, u).unwrap()] = LinkCost::Queue(d);
    }
    let compute = (0..n)
        .map(|_| ComputeCost {
            kind: ComputeKind::SumQueue,
            s: rng.random_range(8.0..20.0),
            c: vec![rng.random_range(1.0..5.0), rng.random_range(1.0..5.0)],
        })
        .collect();
    let tasks = (0..rng.random_range(1..4))
        .map(|_| {
            let mut rates = vec![0.0; n];
            for _ in 0..2 {
                rates[rng.random_range(0..n)] += rng.random_range(0.2..0.6);
            }
            Task {
                dest: rng.random_range(0..n),
                m: rng.random_range(0..2),
                a: rng.random_range(0.2..2.0),
                rates,
            }
        })
        .collect();
    let s = Scenario { network, link_costs, compute, tasks, seed };
    validate_scenario(&s).into_result().unwrap();
    s
}

#[test]
fn broadcast_round_sends_two_messages_per_task_and_link() {
    for seed in 0..5 {
        let s = random_scenario(seed);
        let st = initial_strategy(&s).unwrap();
        let flows = evaluate_flows(&s, &st).unwrap();
        let mut delays = DelayModel::Uniform { max: 1.5, seed }.sampler();
        let round = run_round(&s, &st, &flows, &mut delays, false).unwrap();
        assert_eq!(round.messages, 2 * s.num_tasks() * s.num_links());
        for (i, &sent) in round.sends.iter().enumerate() {
            assert_eq!(sent, 2 * s.num_tasks() * s.network.inc(i).len());
        }
        assert_eq!(round.marginals, compute_marginals(&s, &st, &flows).unwrap());
    }
}

#[test]
fn synchronous_sgp_never_increases_cost_and_stays_loop_free() {
    for seed in 10..15 {
        let s = random_scenario(seed);
        let mut opt = Optimizer::new(s.clone(), initial_strategy(&s).unwrap(), UpdateConfig::default()).unwrap();
        let mut last = opt.cost();
        opt.run_with(|o| {
            assert!(o.cost() <= last + 1e-12 * (1.0 + last), "seed {seed}: cost rose from {last} to {}", o.cost());
            assert!(detect_loops(o.strategy(), &o.scenario().network).is_loop_free());
            last = o.cost();
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn sgp_cost_lies_within_frank_wolfe_bounds() {
    for seed in 20..25 {
        let s = random_scenario(seed);
        let config = UpdateConfig { max_iters: 20_000, tolerance: 1e-7, ..Default::default() };
        let sgp = solve(Algorithm::Sgp, &s, &config).unwrap();
        let cert = fw_solve(&s, 1e-7, 20_000).unwrap().certificate;
        assert!(cert.lower_bound <= sgp.cost + 1e-9, "seed {seed}: {} > {}", cert.lower_bound, sgp.cost);
        assert!(sgp.cost <= cert.lower_bound * (1.0 + 1e-3), "seed {seed}: {} vs {}", sgp.cost, cert.lower_bound);
    }
}

#[test]
fn no_algorithm_beats_sgp_on_e1() {
    let s = fixtures::e1();
    let config = UpdateConfig::default();
    let sgp = solve(Algorithm::Sgp, &s, &config).unwrap();
    assert!((sgp.cost - 2.5).abs() < 1e-3);
    for a in Algorithm::ALL {
        let r = solve(a, &s, &config).unwrap();
        assert!(r.feasible);
        assert!(r.cost >= sgp.cost - 1e-6, "{a} found {} below SGP {}", r.cost, sgp.cost);
    }
}

#[test]
fn scenario_and_strategy_survive_json_round_trip() {
    let s = random_scenario(30);
    let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
    let st = solve(Algorithm::Sgp, &s, &UpdateConfig::default()).unwrap().strategy;
    let again = Strategy::from_json(&st.to_json(&s.network).unwrap(), &s).unwrap();
    assert_eq!(again, st);
}
