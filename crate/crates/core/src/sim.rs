//! Deterministic discrete-event simulation of one inference service.
//!
//! Requests are generated at the client, delayed by the network model, queued
//! EDF at the server and processed in batches whose latency comes from the
//! [`LatencyModel`]. Every adaptation period the policy sees a queue snapshot
//! and a rate estimate and returns the deployment for the next window.
//!
//! Event times are integer microseconds. At equal timestamps events run in
//! the order tick, arrival, completion, replica-ready, then by insertion.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_model::LatencyModel;
use crate::policy::{DecisionContext, PolicyAction, ReplicaId, ScalingPolicy};
use crate::queue::{EdfQueue, Request, RequestId};
use crate::scaler::{Allocation, RateEstimate};
use crate::trace::{self, BandwidthTrace};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalMode {
    #[default]
    Fixed,
    Poisson,
}

impl std::str::FromStr for ArrivalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(ArrivalMode::Fixed),
            "poisson" => Ok(ArrivalMode::Poisson),
            other => Err(format!("unknown arrival mode `{other}` (fixed|poisson)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub duration_s: f64,
    pub rate_rps: f64,
    pub arrival_mode: ArrivalMode,
    pub request_size_kb: f64,
    pub slo_ms: f64,
    pub trace: BandwidthTrace,
    pub model: LatencyModel,
    pub adaptation_period_ms: f64,
    pub seed: u64,
    /// Delay before a vertical resize takes effect for policies that cannot
    /// resize in place.
    pub resize_delay_ms: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ScenarioInvalid(m.to_string()));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad("duration_s must be positive");
        }
        if !(self.rate_rps > 0.0) || !self.rate_rps.is_finite() {
            return bad("rate_rps must be positive");
        }
        if !(self.request_size_kb > 0.0) {
            return bad("request_size_kb must be positive");
        }
        if !(self.slo_ms > 0.0) {
            return bad("slo_ms must be positive");
        }
        if !(self.adaptation_period_ms > 0.0) || ms_to_us(self.adaptation_period_ms) == 0 {
            return bad("adaptation_period_ms must be positive");
        }
        if !(self.resize_delay_ms >= 0.0) {
            return bad("resize_delay_ms must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub id: RequestId,
    pub send_time_ms: f64,
    pub comm_latency_ms: f64,
    pub queue_latency_ms: f64,
    pub processing_latency_ms: f64,
    pub e2e_latency_ms: f64,
    pub violated: bool,
    pub allocation_at_service: Allocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window_start_ms: f64,
    pub allocation: Allocation,
    /// Violations among requests completing in this window.
    pub violations: u64,
    /// Cores reserved during the window (replica count for one-core replicas).
    pub cores_allocated: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub outcomes: Vec<RequestOutcome>,
    pub windows: Vec<WindowRecord>,
    pub total_core_ms: f64,
    /// Simulated span: the later of the scenario end and the last completion.
    pub end_ms: f64,
    pub max_queue_len: usize,
    pub saturated_windows: u64,
    pub dead_on_arrival: u64,
}

pub(crate) fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Client send times in ms. Fixed mode spaces `floor(rate * duration)`
/// requests exactly `1/rate` apart; Poisson mode draws exponential gaps from a
/// ChaCha stream seeded with `seed`.
pub fn generate_arrivals(rate_rps: f64, duration_s: f64, mode: ArrivalMode, seed: u64) -> Vec<f64> {
    assert!(rate_rps > 0.0, "rate must be positive");
    match mode {
        ArrivalMode::Fixed => {
            let n = (rate_rps * duration_s).floor().max(0.0) as u64;
            (0..n).map(|i| i as f64 * 1000.0 / rate_rps).collect()
        }
        ArrivalMode::Poisson => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gap = Exp::new(rate_rps).expect("positive rate");
            let mut out = Vec::new();
            let mut t = gap.sample(&mut rng);
            while t < duration_s {
                out.push(t * 1000.0);
                t += gap.sample(&mut rng);
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Tick,
    Arrival(usize),
    Completion(ReplicaId),
    ReplicaReady,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Tick => 0,
            EventKind::Arrival(_) => 1,
            EventKind::Completion(_) => 2,
            EventKind::ReplicaReady => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time_us: u64,
    rank: u8,
    seq: u64,
    kind: EventKind,
}

#[derive(Debug)]
struct Server {
    id: ReplicaId,
    cores: u32,
    ready_at_us: u64,
    busy: Option<InFlight>,
    retired: bool,
}

#[derive(Debug)]
struct InFlight {
    requests: Vec<Request>,
    start_us: u64,
    proc_us: u64,
    allocation: Allocation,
}

struct Pending {
    send_us: u64,
    comm_us: u64,
    arrival_us: u64,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    policy: &'a mut ScalingPolicy,
    events: BinaryHeap<Reverse<Event>>,
    seq: u64,
    queue: EdfQueue,
    servers: Vec<Server>,
    batch: u32,
    // Vertical allocation waiting for a resize delay to elapse.
    deferred: Option<(u64, Allocation)>,
    rr_next: usize,
    requests: Vec<Pending>,
    recent_arrivals: VecDeque<u64>,
    arrived: usize,
    completed: usize,
    outcomes: Vec<RequestOutcome>,
    windows: Vec<WindowRecord>,
    max_queue_len: usize,
    saturated_windows: u64,
    dead_on_arrival: u64,
    period_us: u64,
    duration_us: u64,
    last_event_us: u64,
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, time_us: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event { time_us, rank: kind.rank(), seq: self.seq, kind }));
    }

    fn outstanding(&self) -> bool {
        self.completed < self.requests.len()
    }

    fn apply(&mut self, action: PolicyAction, now_us: u64) {
        match action {
            PolicyAction::Vertical { allocation, .. } => {
                let delay_us = if self.policy.resizes_in_place() {
                    0
                } else {
                    ms_to_us(self.scenario.resize_delay_ms)
                };
                if self.servers.is_empty() {
                    self.servers.push(Server {
                        id: 0,
                        cores: allocation.cores,
                        ready_at_us: 0,
                        busy: None,
                        retired: false,
                    });
                    self.batch = allocation.batch;
                    return;
                }
                if delay_us == 0 {
                    self.servers[0].cores = allocation.cores;
                    self.batch = allocation.batch;
                    self.deferred = None;
                } else if (self.servers[0].cores, self.batch) != (allocation.cores, allocation.batch) {
                    self.deferred = Some((now_us + delay_us, allocation));
                    self.schedule(now_us + delay_us, EventKind::ReplicaReady);
                }
            }
            PolicyAction::Replicas { replicas, batch } => {
                self.batch = batch;
                let keep: Vec<ReplicaId> = replicas.iter().map(|r| r.id).collect();
                self.servers.retain_mut(|s| {
                    if keep.contains(&s.id) && !s.retired {
                        return true;
                    }
                    s.retired = true;
                    s.busy.is_some()
                });
                for r in replicas {
                    if self.servers.iter().any(|s| s.id == r.id && !s.retired) {
                        continue;
                    }
                    let ready_at_us = ms_to_us(r.ready_at_ms);
                    self.servers.push(Server { id: r.id, cores: 1, ready_at_us, busy: None, retired: false });
                    if ready_at_us > now_us {
                        self.schedule(ready_at_us, EventKind::ReplicaReady);
                    }
                }
                self.servers.sort_by_key(|s| (s.id, s.retired));
            }
        }
    }

    fn dispatch(&mut self, now_us: u64) {
        if let Some((at, alloc)) = self.deferred {
            if at <= now_us {
                if let Some(s) = self.servers.iter_mut().find(|s| !s.retired) {
                    s.cores = alloc.cores;
                }
                self.batch = alloc.batch;
                self.deferred = None;
            }
        }
        let n = self.servers.len();
        if n == 0 {
            return;
        }
        let now_ms = us_to_ms(now_us);
        for step in 0..n {
            if self.queue.is_empty() {
                break;
            }
            let idx = (self.rr_next + step) % n;
            let server = &self.servers[idx];
            if server.retired || server.busy.is_some() || server.ready_at_us > now_us {
                continue;
            }
            let batch = self.queue.drain_batch(self.batch as usize, now_ms);
            let cores = server.cores;
            let latency_ms = self.scenario.model.predict_latency(batch.len() as u32, cores);
            let proc_us = ms_to_us(latency_ms).max(1);
            let id = server.id;
            self.servers[idx].busy = Some(InFlight {
                requests: batch,
                start_us: now_us,
                proc_us,
                allocation: Allocation::new(cores, self.batch),
            });
            self.schedule(now_us + proc_us, EventKind::Completion(id));
            self.rr_next = (idx + 1) % n;
        }
    }

    fn on_tick(&mut self, now_us: u64) {
        // arrivals in (now - period, now]
        if let Some(lo) = now_us.checked_sub(self.period_us) {
            while self.recent_arrivals.front().is_some_and(|&t| t <= lo) {
                self.recent_arrivals.pop_front();
            }
        }
        let window_ms = us_to_ms(self.period_us);
        let lambda = RateEstimate {
            lambda_rps: self.recent_arrivals.len() as f64 / (window_ms / 1000.0),
            window_ms,
        };
        let snap = self.queue.snapshot();
        let ctx = DecisionContext {
            model: &self.scenario.model,
            snap: &snap,
            lambda,
            slo_ms: self.scenario.slo_ms,
            now_ms: us_to_ms(now_us),
        };
        let action = self.policy.decide(&ctx);
        if let PolicyAction::Vertical { saturated: true, .. } = action {
            self.saturated_windows += 1;
        }
        let cores_allocated = action.cores_allocated();
        let allocation = Allocation::new(cores_allocated, action.batch());
        self.windows.push(WindowRecord {
            window_start_ms: us_to_ms(now_us),
            allocation,
            violations: 0,
            cores_allocated,
        });
        self.apply(action, now_us);

        let next = now_us + self.period_us;
        if next < self.duration_us || self.outstanding() {
            self.schedule(next, EventKind::Tick);
        }
    }

    fn on_arrival(&mut self, idx: usize, now_us: u64) {
        let p = &self.requests[idx];
        let request = Request {
            id: idx as RequestId,
            arrival_time_ms: us_to_ms(p.arrival_us),
            comm_latency_ms: us_to_ms(p.comm_us),
            slo_ms: self.scenario.slo_ms,
            size_kb: self.scenario.request_size_kb,
        };
        if request.is_dead_on_arrival() {
            self.dead_on_arrival += 1;
        }
        self.queue
            .push(request, us_to_ms(now_us))
            .expect("request ids are unique and arrive at their own timestamp");
        self.recent_arrivals.push_back(now_us);
        self.arrived += 1;
        self.max_queue_len = self.max_queue_len.max(self.queue.len());
    }

    fn on_completion(&mut self, server_id: ReplicaId, now_us: u64) {
        let pos = self
            .servers
            .iter()
            .position(|s| s.id == server_id && s.busy.as_ref().is_some_and(|b| b.start_us + b.proc_us == now_us))
            .expect("completion for a busy server");
        let flight = self.servers[pos].busy.take().expect("busy");
        if self.servers[pos].retired {
            self.servers.remove(pos);
            if self.rr_next >= self.servers.len() {
                self.rr_next = 0;
            }
        }
        let proc_ms = us_to_ms(flight.proc_us);
        for r in flight.requests {
            let p = &self.requests[r.id as usize];
            let comm_ms = us_to_ms(p.comm_us);
            let queue_ms = us_to_ms(flight.start_us - p.arrival_us);
            let e2e = comm_ms + queue_ms + proc_ms;
            let violated = e2e > self.scenario.slo_ms;
            if violated {
                let w = ((now_us / self.period_us) as usize).min(self.windows.len().saturating_sub(1));
                if let Some(win) = self.windows.get_mut(w) {
                    win.violations += 1;
                }
            }
            self.outcomes.push(RequestOutcome {
                id: r.id,
                send_time_ms: us_to_ms(p.send_us),
                comm_latency_ms: comm_ms,
                queue_latency_ms: queue_ms,
                processing_latency_ms: proc_ms,
                e2e_latency_ms: e2e,
                violated,
                allocation_at_service: flight.allocation,
            });
            self.completed += 1;
        }
    }
}

/// Runs `policy` over `scenario` until every generated request has completed.
pub fn run(scenario: &Scenario, policy: &mut ScalingPolicy) -> Result<SimResult, SimError> {
    scenario.validate()?;
    let sends = generate_arrivals(scenario.rate_rps, scenario.duration_s, scenario.arrival_mode, scenario.seed);
    let requests: Vec<Pending> = sends
        .iter()
        .map(|&send_ms| {
            let send_us = ms_to_us(send_ms);
            let bw = scenario.trace.bandwidth_at(send_ms / 1000.0);
            let comm_us = ms_to_us(trace::comm_latency(scenario.request_size_kb, bw));
            Pending { send_us, comm_us, arrival_us: send_us + comm_us }
        })
        .collect();

    let mut engine = Engine {
        scenario,
        policy,
        events: BinaryHeap::new(),
        seq: 0,
        queue: EdfQueue::new(),
        servers: Vec::new(),
        batch: 1,
        deferred: None,
        rr_next: 0,
        requests,
        recent_arrivals: VecDeque::new(),
        arrived: 0,
        completed: 0,
        outcomes: Vec::new(),
        windows: Vec::new(),
        max_queue_len: 0,
        saturated_windows: 0,
        dead_on_arrival: 0,
        period_us: ms_to_us(scenario.adaptation_period_ms),
        duration_us: ms_to_us(scenario.duration_s * 1000.0),
        last_event_us: 0,
    };
    let initial = engine.policy.initial_action();
    engine.apply(initial, 0);
    for i in 0..engine.requests.len() {
        let at = engine.requests[i].arrival_us;
        engine.schedule(at, EventKind::Arrival(i));
    }
    engine.schedule(0, EventKind::Tick);

    while let Some(Reverse(ev)) = engine.events.pop() {
        let now = ev.time_us;
        engine.last_event_us = engine.last_event_us.max(now);
        match ev.kind {
            EventKind::Tick => engine.on_tick(now),
            EventKind::Arrival(i) => engine.on_arrival(i, now),
            EventKind::Completion(id) => engine.on_completion(id, now),
            EventKind::ReplicaReady => {}
        }
        engine.dispatch(now);
        if !engine.outstanding() && now >= engine.duration_us {
            break;
        }
    }
    debug_assert_eq!(engine.arrived, engine.requests.len());

    let end_us = engine.duration_us.max(engine.last_event_us);
    let mut total_core_ms = 0.0;
    for (i, w) in engine.windows.iter().enumerate() {
        let start = ms_to_us(w.window_start_ms);
        let stop = engine
            .windows
            .get(i + 1)
            .map(|n| ms_to_us(n.window_start_ms))
            .unwrap_or(end_us)
            .min(end_us)
            .max(start);
        total_core_ms += f64::from(w.cores_allocated) * us_to_ms(stop - start);
    }
    let mut outcomes = engine.outcomes;
    outcomes.sort_by_key(|o| o.id);
    Ok(SimResult {
        outcomes,
        windows: engine.windows,
        total_core_ms,
        end_ms: us_to_ms(end_us),
        max_queue_len: engine.max_queue_len,
        saturated_windows: engine.saturated_windows,
        dead_on_arrival: engine.dead_on_arrival,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub requests: usize,
    pub violation_count: u64,
    pub violation_rate: f64,
    pub p50_e2e_ms: f64,
    pub p99_e2e_ms: f64,
    pub mean_cores: f64,
    pub total_core_ms: f64,
    pub max_queue_len: usize,
    pub saturated_windows: u64,
    pub dead_on_arrival: u64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn summarize(result: &SimResult, slo_ms: f64) -> Summary {
    let n = result.outcomes.len();
    let violation_count = result.outcomes.iter().filter(|o| o.e2e_latency_ms > slo_ms).count() as u64;
    let mut e2e: Vec<f64> = result.outcomes.iter().map(|o| o.e2e_latency_ms).collect();
    e2e.sort_by(f64::total_cmp);
    Summary {
        requests: n,
        violation_count,
        violation_rate: if n == 0 { 0.0 } else { violation_count as f64 / n as f64 },
        p50_e2e_ms: percentile(&e2e, 0.50),
        p99_e2e_ms: percentile(&e2e, 0.99),
        mean_cores: if result.end_ms > 0.0 { result.total_core_ms / result.end_ms } else { 0.0 },
        total_core_ms: result.total_core_ms,
        max_queue_len: result.max_queue_len,
        saturated_windows: result.saturated_windows,
        dead_on_arrival: result.dead_on_arrival,
    }
}
