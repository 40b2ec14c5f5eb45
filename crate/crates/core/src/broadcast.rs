//! Event-driven simulation of the two-stage control-message protocol that
//! computes the marginals distributedly.
//!
//! Stage 1 carries result marginals upstream from each destination (type I
//! messages); stage 2 carries data marginals upstream from the nodes that do
//! not forward data (type II). Every node sends each kind of message for each
//! task to all of its in-neighbors once, so a round costs `2 |S| |E|`
//! transmissions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::marginals::{MarginalState, TaskMarginals};
use crate::model::Scenario;
use crate::sgp::{Optimizer, RunResult, Termination, UpdateConfig};
use crate::strategy::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MessageKind {
    /// Carries a result marginal.
    TypeI,
    /// Carries a data marginal.
    TypeII,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub task: usize,
    pub sender: usize,
    pub receiver: usize,
    /// `pt` of the sender for type I, `pr` for type II.
    pub value: f64,
    /// Derivative of the link `receiver -> sender`, as measured by the sender.
    pub link_derivative: f64,
    /// Longest positive-path hop count of the sender in the message's class.
    pub hops: usize,
    /// Whether a positive path from the sender contains an improper link.
    pub tagged: bool,
}

/// Per-message delay law, in slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DelayModel {
    Fixed(f64),
    /// Uniform on `[0, max]`, reproducible from `seed`.
    Uniform { max: f64, seed: u64 },
}

impl DelayModel {
    pub const ZERO: DelayModel = DelayModel::Fixed(0.0);

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DelayModel::Fixed(d) => d.is_finite() && d >= 0.0,
            DelayModel::Uniform { max, .. } => max.is_finite() && max >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid delay model {self:?}")))
        }
    }

    pub fn sampler(&self) -> DelaySampler {
        let seed = match *self {
            DelayModel::Uniform { seed, .. } => seed,
            DelayModel::Fixed(_) => 0,
        };
        DelaySampler { model: *self, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// Stateful delay source; one sampler serves a whole simulation so rounds
/// draw different delays.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    model: DelayModel,
    rng: ChaCha8Rng,
}

impl DelaySampler {
    pub fn sample(&mut self) -> f64 {
        match self.model {
            DelayModel::Fixed(d) => d,
            DelayModel::Uniform { max, .. } if max > 0.0 => self.rng.random_range(0.0..=max),
            DelayModel::Uniform { .. } => 0.0,
        }
    }
}

/// One delivered message, for the JSON-lines trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: MessageKind,
    pub task: usize,
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

pub fn write_trace<W: Write>(mut out: W, events: &[TraceEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        writeln!(out).map_err(|e| Error::Domain(format!("trace write failed: {e}")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub marginals: MarginalState,
    pub messages: usize,
    /// Messages sent by each node.
    pub sends: Vec<usize>,
    /// Time from the start of the round to the last delivery.
    pub duration: f64,
    /// Hop counts and improper tags carried by the messages, per task and node.
    pub result_hops: Vec<Vec<usize>>,
    pub data_hops: Vec<Vec<usize>>,
    pub result_tags: Vec<Vec<bool>>,
    pub data_tags: Vec<Vec<bool>>,
    /// Deliveries in order, when recording was requested.
    pub events: Vec<TraceEvent>,
}

struct Pending {
    time: f64,
    seq: usize,
    msg: ControlMessage,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so the max-heap pops the earliest delivery; ties go to the
    // message sent first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// What a node has learned about one task from its out-neighbors.
struct NodeView {
    pt: Option<f64>,
    pr: Option<f64>,
    /// Values received per out-neighbor position.
    got_pt: Vec<Option<(f64, usize, bool)>>,
    got_pr: Vec<Option<(f64, usize, bool)>>,
    /// Required messages (positive-fraction options) still missing.
    need_result: usize,
    need_data: usize,
    result_hops: usize,
    data_hops: usize,
    result_tag: bool,
    data_tag: bool,
}

struct Round<'a> {
    scenario: &'a Scenario,
    strategy: &'a Strategy,
    flows: &'a FlowState,
    delays: &'a mut DelaySampler,
    queue: BinaryHeap<Pending>,
    seq: usize,
    sends: Vec<usize>,
    views: Vec<Vec<NodeView>>,
}

impl Round<'_> {
    fn send_all(&mut self, k: usize, i: usize, kind: MessageKind, now: f64) {
        let v = &self.views[k][i];
        let (value, hops, tagged) = match kind {
            MessageKind::TypeI => (v.pt.unwrap_or(0.0), v.result_hops, v.result_tag),
            MessageKind::TypeII => (v.pr.unwrap_or(0.0), v.data_hops, v.data_tag),
        };
        for a in self.scenario.network.inc(i) {
            let msg = ControlMessage {
                kind,
                task: k,
                sender: i,
                receiver: a.node,
                value,
                link_derivative: self.flows.link_eval[a.link].first,
                hops,
                tagged,
            };
            let time = now + self.delays.sample();
            self.queue.push(Pending { time, seq: self.seq, msg });
            self.seq += 1;
            self.sends[i] += 1;
        }
    }

    /// Computes the result marginal of `i` once all required type I messages
    /// are in. The sum runs in the same order as the centralized recursion.
    fn try_result(&mut self, k: usize, i: usize, now: f64) {
        let net = &self.scenario.network;
        let row = &self.strategy.tasks[k].result[i];
        let v = &mut self.views[k][i];
        if v.pt.is_some() || v.need_result > 0 {
            return;
        }
        let mine: Vec<(f64, usize, bool)> = v.got_pt.iter().map(|g| g.unwrap_or((0.0, 0, false))).collect();
        let mut acc = 0.0;
        let mut hops = 0;
        for (p, a) in net.out(i).iter().enumerate() {
            if row[p] > 0.0 {
                acc += row[p] * (self.flows.link_eval[a.link].first + mine[p].0);
                hops = hops.max(1 + mine[p].1);
            }
        }
        let tag = (0..net.out(i).len()).any(|p| row[p] > 0.0 && (mine[p].0 >= acc || mine[p].2));
        v.pt = Some(acc);
        v.result_hops = hops;
        v.result_tag = tag;
        self.send_all(k, i, MessageKind::TypeI, now);
        self.try_data(k, i, now);
    }

    /// Computes the data marginal of `i` once its own result marginal is known
    /// and all required type II messages are in.
    fn try_data(&mut self, k: usize, i: usize, now: f64) {
        let net = &self.scenario.network;
        let task = &self.scenario.tasks[k];
        let row = &self.strategy.tasks[k].data[i];
        let v = &mut self.views[k][i];
        let Some(pt) = v.pt else { return };
        if v.pr.is_some() || v.need_data > 0 {
            return;
        }
        let mine: Vec<(f64, usize, bool)> = v.got_pr.iter().map(|g| g.unwrap_or((0.0, 0, false))).collect();
        let mut acc = 0.0;
        let mut hops = 0;
        if row[0] > 0.0 {
            acc += row[0] * (self.flows.comp_grad[i][task.m] + task.a * pt);
        }
        for (p, a) in net.out(i).iter().enumerate() {
            if row[1 + p] > 0.0 {
                acc += row[1 + p] * (self.flows.link_eval[a.link].first + mine[p].0);
                hops = hops.max(1 + mine[p].1);
            }
        }
        let tag = (0..net.out(i).len()).any(|p| row[1 + p] > 0.0 && (mine[p].0 >= acc || mine[p].2));
        v.pr = Some(acc);
        v.data_hops = hops;
        v.data_tag = tag;
        self.send_all(k, i, MessageKind::TypeII, now);
    }

    fn deliver(&mut self, msg: ControlMessage, now: f64) {
        let net = &self.scenario.network;
        let (k, j, i) = (msg.task, msg.sender, msg.receiver);
        let p = net.out(i).iter().position(|a| a.node == j).expect("messages travel along links");
        let entry = Some((msg.value, msg.hops, msg.tagged));
        let v = &mut self.views[k][i];
        match msg.kind {
            MessageKind::TypeI => {
                v.got_pt[p] = entry;
                if i != self.scenario.tasks[k].dest && self.strategy.tasks[k].result[i][p] > 0.0 {
                    v.need_result -= 1;
                }
                self.try_result(k, i, now);
            }
            MessageKind::TypeII => {
                v.got_pr[p] = entry;
                if self.strategy.tasks[k].data[i][1 + p] > 0.0 {
                    v.need_data -= 1;
                }
                self.try_data(k, i, now);
            }
        }
    }
}

/// Runs one complete round of the protocol for the given strategy and flows.
/// The resulting marginals match [`crate::compute_marginals`] exactly: every
/// node evaluates the same sums in the same order.
pub fn run_round(
    scenario: &Scenario,
    strategy: &Strategy,
    flows: &FlowState,
    delays: &mut DelaySampler,
    record: bool,
) -> Result<RoundOutcome> {
    if !flows.feasible {
        return Err(Error::InfeasibleState);
    }
    let net = &scenario.network;
    let n = net.num_nodes();
    let views = scenario
        .tasks
        .iter()
        .enumerate()
        .map(|(k, task)| {
            let ts = &strategy.tasks[k];
            (0..n)
                .map(|i| {
                    let deg = net.out(i).len();
                    let need_result =
                        if i == task.dest { 0 } else { ts.result[i].iter().filter(|&&f| f > 0.0).count() };
                    NodeView {
                        pt: None,
                        pr: None,
                        got_pt: vec![None; deg],
                        got_pr: vec![None; deg],
                        need_result,
                        need_data: ts.data[i][1..].iter().filter(|&&f| f > 0.0).count(),
                        result_hops: 0,
                        data_hops: 0,
                        result_tag: false,
                        data_tag: false,
                    }
                })
                .collect()
        })
        .collect();
    let mut round = Round {
        scenario,
        strategy,
        flows,
        delays,
        queue: BinaryHeap::new(),
        seq: 0,
        sends: vec![0; n],
        views,
    };

    // Destinations know pt = 0; stage 2 may also start right there.
    for (k, task) in scenario.tasks.iter().enumerate() {
        let d = task.dest;
        round.views[k][d].pt = Some(0.0);
        round.send_all(k, d, MessageKind::TypeI, 0.0);
        round.try_data(k, d, 0.0);
    }

    let mut events = Vec::new();
    let mut now = 0.0;
    while let Some(Pending { time, msg, .. }) = round.queue.pop() {
        now = time;
        if record {
            events.push(TraceEvent {
                time,
                kind: msg.kind,
                task: msg.task,
                from: msg.sender,
                to: msg.receiver,
                value: msg.value,
            });
        }
        round.deliver(msg, time);
    }

    let mut tasks = Vec::with_capacity(scenario.num_tasks());
    let mut out = RoundOutcome {
        marginals: MarginalState { tasks: Vec::new() },
        messages: round.seq,
        sends: round.sends,
        duration: now,
        result_hops: Vec::new(),
        data_hops: Vec::new(),
        result_tags: Vec::new(),
        data_tags: Vec::new(),
        events,
    };
    for (k, task) in scenario.tasks.iter().enumerate() {
        let views = &round.views[k];
        let waiting: Vec<usize> = (0..n).filter(|&i| views[i].pt.is_none() || views[i].pr.is_none()).collect();
        if !waiting.is_empty() {
            return Err(Error::ProtocolStall { task: k, waiting });
        }
        let tf = &flows.tasks[k];
        let pt: Vec<f64> = views.iter().map(|v| v.pt.unwrap_or(0.0)).collect();
        let pr: Vec<f64> = views.iter().map(|v| v.pr.unwrap_or(0.0)).collect();
        let mut delta_data = Vec::with_capacity(n);
        let mut delta_result = Vec::with_capacity(n);
        let mut grad_data = Vec::with_capacity(n);
        let mut grad_result = Vec::with_capacity(n);
        for (u, v) in views.iter().enumerate() {
            let mut dd = Vec::with_capacity(1 + v.got_pr.len());
            dd.push(flows.comp_grad[u][task.m] + task.a * pt[u]);
            let mut dr = Vec::with_capacity(v.got_pt.len());
            for (p, a) in net.out(u).iter().enumerate() {
                let d1 = flows.link_eval[a.link].first;
                let (r, _, _) = v.got_pr[p].expect("every node reports to all in-neighbors");
                let (t, _, _) = v.got_pt[p].expect("every node reports to all in-neighbors");
                dd.push(d1 + r);
                dr.push(if u == task.dest { 0.0 } else { d1 + t });
            }
            grad_data.push(dd.iter().map(|d| tf.t_data[u] * d).collect());
            grad_result.push(dr.iter().map(|d| tf.t_result[u] * d).collect());
            delta_data.push(dd);
            delta_result.push(dr);
        }
        out.result_hops.push(views.iter().map(|v| v.result_hops).collect());
        out.data_hops.push(views.iter().map(|v| v.data_hops).collect());
        out.result_tags.push(views.iter().map(|v| v.result_tag).collect());
        out.data_tags.push(views.iter().map(|v| v.data_tag).collect());
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
    out.marginals = MarginalState { tasks };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncConfig {
    /// Optimizer settings; `max_iters` counts slots.
    pub update: UpdateConfig,
    pub delays: DelayModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncRunResult {
    pub run: RunResult,
    /// Rounds started and control messages sent over the whole run.
    pub rounds: usize,
    pub messages: usize,
}

struct InFlight {
    started: usize,
    done_at: f64,
    marginals: MarginalState,
}

/// Slot-driven simulation: a broadcast round starts at every slot boundary
/// with the strategy in force at that moment, and at every boundary where a
/// newer round has completed, all rows update from that round's (possibly
/// stale) marginals. With zero delays every slot sees fresh marginals and the
/// run matches the synchronous optimizer.
pub fn run_async_sim(scenario: &Scenario, start: Strategy, config: &AsyncConfig) -> Result<AsyncRunResult> {
    config.delays.validate()?;
    let mut opt = Optimizer::new(scenario.clone(), start, config.update)?;
    let mut sampler = config.delays.sampler();
    let mut in_flight: Vec<InFlight> = Vec::new();
    let mut trajectory = vec![opt.point(0)];
    let mut rounds = 0;
    let mut messages = 0;
    let mut slot = 0usize;
    let termination = loop {
        if opt.is_converged() {
            break Termination::Converged;
        }
        if opt.iteration() >= config.update.max_iters {
            break Termination::MaxIterations;
        }
        let now = slot as f64;
        let r = run_round(scenario, opt.strategy(), opt.flows(), &mut sampler, false)?;
        rounds += 1;
        messages += r.messages;
        in_flight.push(InFlight { started: slot, done_at: now + r.duration, marginals: r.marginals });

        // Use the newest completed round; older completed ones are superseded.
        // Marginals from an earlier slot may be stale, which needs the cycle
        // guard.
        let newest = in_flight.iter().rposition(|f| f.done_at <= now);
        let n = match newest {
            Some(idx) => {
                let ready = in_flight.drain(..=idx).next_back().expect("index is in range");
                opt.step_with(&ready.marginals, ready.started != slot)?
            }
            None => {
                opt.idle();
                0
            }
        };
        trajectory.push(opt.point(n));
        slot += 1;
    };
    Ok(AsyncRunResult {
        run: RunResult { strategy: opt.strategy().clone(), trajectory, termination },
        rounds,
        messages,
    })
}
