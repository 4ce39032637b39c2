//! Scaling policies driven by the simulator once per adaptation window.
//!
//! - `Sponge`: in-place vertical scaling chosen by [`scaler::solve`].
//! - `Static`: a fixed (cores, batch) allocation.
//! - `Horizontal`: one-core replicas added or removed to track the arrival
//!   rate, each new replica paying a cold start before it can serve.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_model::LatencyModel;
use crate::queue::QueueSnapshot;
use crate::scaler::{self, Allocation, RateEstimate, ScalerError, ScalerParams};

pub const DEFAULT_COLD_START_MS: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy `{0}` (expected sponge, static:<cores>[:<batch>] or horizontal)")]
    Unknown(String),
    #[error("invalid policy parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
}

/// Inputs available to a policy at an adaptation tick.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub model: &'a LatencyModel,
    pub snap: &'a QueueSnapshot,
    pub lambda: RateEstimate,
    pub slo_ms: f64,
    pub now_ms: f64,
}

pub type ReplicaId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replica {
    pub id: ReplicaId,
    pub ready_at_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyAction {
    /// Run one instance with this allocation.
    Vertical { allocation: Allocation, saturated: bool },
    /// Run these one-core replicas, each batching up to `batch`.
    Replicas { replicas: Vec<Replica>, batch: u32 },
}

impl PolicyAction {
    pub fn cores_allocated(&self) -> u32 {
        match self {
            PolicyAction::Vertical { allocation, .. } => allocation.cores,
            PolicyAction::Replicas { replicas, .. } => replicas.len() as u32,
        }
    }

    pub fn batch(&self) -> u32 {
        match self {
            PolicyAction::Vertical { allocation, .. } => allocation.batch,
            PolicyAction::Replicas { batch, .. } => *batch,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpongePolicy {
    pub params: ScalerParams,
    current: Allocation,
}

impl SpongePolicy {
    pub fn new(params: ScalerParams) -> Result<Self, PolicyError> {
        params.validate()?;
        Ok(Self { params, current: Allocation::new(1, 1) })
    }

    pub fn current(&self) -> Allocation {
        self.current
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> PolicyAction {
        match scaler::solve(ctx.model, ctx.snap, ctx.slo_ms, &ctx.lambda, &self.params) {
            Ok(allocation) => {
                self.current = allocation;
                PolicyAction::Vertical { allocation, saturated: false }
            }
            Err(_) => {
                // Saturated: keep the batch, go to the core ceiling.
                self.current = Allocation::new(self.params.c_max, self.current.batch);
                PolicyAction::Vertical { allocation: self.current, saturated: true }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPolicy {
    pub allocation: Allocation,
}

impl StaticPolicy {
    /// Fixed `cores` with the largest batch `b <= b_max` such that
    /// `l(b, cores) < slo_ms`; batch 1 if none qualifies.
    pub fn with_largest_batch(model: &LatencyModel, cores: u32, slo_ms: f64, b_max: u32) -> Self {
        let batch = (1..=b_max)
            .rev()
            .find(|&b| model.predict_latency(b, cores) < slo_ms)
            .unwrap_or(1);
        Self { allocation: Allocation::new(cores, batch) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalParams {
    pub cold_start_ms: f64,
    /// Multiplier on the measured rate when sizing the replica set.
    pub headroom: f64,
    pub b_max: u32,
    pub min_replicas: u32,
    pub max_replicas: u32,
    /// Replicas already warm at time zero.
    pub initial_replicas: u32,
}

impl Default for HorizontalParams {
    fn default() -> Self {
        Self {
            cold_start_ms: DEFAULT_COLD_START_MS,
            headroom: 1.0,
            b_max: scaler::DEFAULT_B_MAX,
            min_replicas: 1,
            max_replicas: 256,
            initial_replicas: 1,
        }
    }
}

impl HorizontalParams {
    fn validate(&self) -> Result<(), PolicyError> {
        if !(self.cold_start_ms >= 0.0) {
            return Err(PolicyError::Invalid("cold_start_ms must be >= 0".into()));
        }
        if !(self.headroom > 0.0) {
            return Err(PolicyError::Invalid("headroom must be > 0".into()));
        }
        if self.b_max < 1 || self.min_replicas < 1 || self.max_replicas < self.min_replicas {
            return Err(PolicyError::Invalid(
                "need b_max >= 1 and 1 <= min_replicas <= max_replicas".into(),
            ));
        }
        Ok(())
    }
}

/// Replica bookkeeping for the horizontal baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalState {
    pub ready: Vec<ReplicaId>,
    pub pending: Vec<Replica>,
    pub per_replica_throughput_rps: f64,
    next_id: ReplicaId,
}

impl HorizontalState {
    pub fn ready_replicas(&self) -> usize {
        self.ready.len()
    }

    pub fn total(&self) -> usize {
        self.ready.len() + self.pending.len()
    }

    fn replicas(&self) -> Vec<Replica> {
        let mut all: Vec<Replica> = self
            .ready
            .iter()
            .map(|&id| Replica { id, ready_at_ms: 0.0 })
            .chain(self.pending.iter().copied())
            .collect();
        all.sort_by_key(|r| r.id);
        all
    }
}

#[derive(Debug, Clone)]
pub struct HorizontalPolicy {
    pub params: HorizontalParams,
    pub state: HorizontalState,
    batch: u32,
}

impl HorizontalPolicy {
    pub fn new(params: HorizontalParams) -> Result<Self, PolicyError> {
        params.validate()?;
        let n = params.initial_replicas.clamp(params.min_replicas, params.max_replicas);
        Ok(Self {
            params,
            state: HorizontalState {
                ready: (0..n).collect(),
                pending: Vec::new(),
                per_replica_throughput_rps: 0.0,
                next_id: n,
            },
            batch: 1,
        })
    }

    /// Throughput-maximising batch on one core whose latency still fits the
    /// budget left after `cl_ms`; batch 1 when nothing fits.
    pub fn replica_batch(model: &LatencyModel, cl_ms: f64, slo_ms: f64, b_max: u32) -> u32 {
        let mut best: Option<(f64, u32)> = None;
        for b in 1..=b_max {
            if model.predict_latency(b, 1) + cl_ms < slo_ms {
                let h = model.throughput(b, 1);
                if best.is_none_or(|(bh, _)| h > bh) {
                    best = Some((h, b));
                }
            }
        }
        best.map(|(_, b)| b).unwrap_or(1)
    }

    pub fn target_replicas(&self, lambda_rps: f64, per_replica_rps: f64) -> u32 {
        let needed = (lambda_rps * self.params.headroom / per_replica_rps).ceil();
        let needed = if needed.is_finite() && needed > 0.0 { needed as u32 } else { 0 };
        needed.clamp(self.params.min_replicas, self.params.max_replicas)
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> PolicyAction {
        let st = &mut self.state;
        let (now_ready, still_pending): (Vec<Replica>, Vec<Replica>) =
            st.pending.iter().partition(|r| r.ready_at_ms <= ctx.now_ms);
        st.ready.extend(now_ready.iter().map(|r| r.id));
        st.pending = still_pending;

        self.batch = Self::replica_batch(ctx.model, ctx.snap.cl_max_ms, ctx.slo_ms, self.params.b_max);
        let per_replica = ctx.model.throughput(self.batch, 1);
        self.state.per_replica_throughput_rps = per_replica;
        let target = self.target_replicas(ctx.lambda.lambda_rps, per_replica) as usize;

        let st = &mut self.state;
        while st.total() < target {
            st.pending.push(Replica {
                id: st.next_id,
                ready_at_ms: ctx.now_ms + self.params.cold_start_ms,
            });
            st.next_id += 1;
        }
        while st.total() > target {
            if st.pending.pop().is_none() {
                st.ready.pop();
            }
        }
        PolicyAction::Replicas { replicas: st.replicas(), batch: self.batch }
    }
}

#[derive(Debug, Clone)]
pub enum ScalingPolicy {
    Sponge(SpongePolicy),
    Static(StaticPolicy),
    Horizontal(HorizontalPolicy),
}

impl ScalingPolicy {
    pub fn name(&self) -> String {
        match self {
            ScalingPolicy::Sponge(_) => "sponge".to_string(),
            ScalingPolicy::Static(s) => format!("static-{}", s.allocation.cores),
            ScalingPolicy::Horizontal(_) => "horizontal".to_string(),
        }
    }

    /// Deployment in force before the first tick.
    pub fn initial_action(&self) -> PolicyAction {
        match self {
            ScalingPolicy::Sponge(s) => PolicyAction::Vertical { allocation: s.current, saturated: false },
            ScalingPolicy::Static(s) => PolicyAction::Vertical { allocation: s.allocation, saturated: false },
            ScalingPolicy::Horizontal(h) => PolicyAction::Replicas {
                replicas: h.state.replicas(),
                batch: h.batch,
            },
        }
    }

    pub fn decide(&mut self, ctx: &DecisionContext<'_>) -> PolicyAction {
        match self {
            ScalingPolicy::Sponge(s) => s.decide(ctx),
            ScalingPolicy::Static(s) => PolicyAction::Vertical { allocation: s.allocation, saturated: false },
            ScalingPolicy::Horizontal(h) => h.decide(ctx),
        }
    }

    /// Whether vertical resizes are applied without delay (no restart).
    pub fn resizes_in_place(&self) -> bool {
        matches!(self, ScalingPolicy::Sponge(_))
    }
}

/// Policy named on the command line or in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicySpec {
    Sponge,
    /// Fixed cores; batch chosen from the model unless given.
    Static { cores: u32, batch: Option<u32> },
    Horizontal,
}

impl FromStr for PolicySpec {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| -> Result<u32, PolicyError> {
            v.parse::<u32>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| PolicyError::Invalid(format!("`{v}` is not a positive integer")))
        };
        match parts.as_slice() {
            ["sponge"] => Ok(PolicySpec::Sponge),
            ["horizontal"] | ["fa2"] => Ok(PolicySpec::Horizontal),
            ["static", cores] => Ok(PolicySpec::Static { cores: num(cores)?, batch: None }),
            ["static", cores, batch] => Ok(PolicySpec::Static {
                cores: num(cores)?,
                batch: Some(num(batch)?),
            }),
            _ => Err(PolicyError::Unknown(s.to_string())),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Sponge => write!(f, "sponge"),
            PolicySpec::Static { cores, batch: None } => write!(f, "static:{cores}"),
            PolicySpec::Static { cores, batch: Some(b) } => write!(f, "static:{cores}:{b}"),
            PolicySpec::Horizontal => write!(f, "horizontal"),
        }
    }
}

impl PolicySpec {
    pub fn build(
        &self,
        model: &LatencyModel,
        slo_ms: f64,
        scaler: ScalerParams,
        horizontal: HorizontalParams,
    ) -> Result<ScalingPolicy, PolicyError> {
        Ok(match *self {
            PolicySpec::Sponge => ScalingPolicy::Sponge(SpongePolicy::new(scaler)?),
            PolicySpec::Static { cores, batch: Some(batch) } => {
                ScalingPolicy::Static(StaticPolicy { allocation: Allocation::new(cores, batch) })
            }
            PolicySpec::Static { cores, batch: None } => ScalingPolicy::Static(
                StaticPolicy::with_largest_batch(model, cores, slo_ms, scaler.b_max),
            ),
            PolicySpec::Horizontal => ScalingPolicy::Horizontal(HorizontalPolicy::new(horizontal)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> LatencyModel {
        LatencyModel::new(40.0, 15.0, 1.0, 0.0).unwrap()
    }

    fn ctx<'a>(m: &'a LatencyModel, snap: &'a QueueSnapshot, rps: f64, now_ms: f64) -> DecisionContext<'a> {
        DecisionContext { model: m, snap, lambda: RateEstimate::from_rps(rps), slo_ms: 1000.0, now_ms }
    }

    #[test]
    fn static_is_constant() {
        let m = model();
        let mut p = ScalingPolicy::Static(StaticPolicy::with_largest_batch(&m, 8, 1000.0, 16));
        let a = p.initial_action();
        let empty = QueueSnapshot::default();
        let busy = QueueSnapshot::uniform(40, 700.0, 1000.0);
        assert_eq!(p.decide(&ctx(&m, &empty, 0.0, 0.0)), a);
        assert_eq!(p.decide(&ctx(&m, &busy, 500.0, 7.0)), a);
        // l(16, 8) = 80 + 1.875 + 16 < 1000
        assert_eq!(a, PolicyAction::Vertical { allocation: Allocation::new(8, 16), saturated: false });
    }

    #[test]
    fn static_batch_respects_slo() {
        let m = model();
        // l(b,1) = 41b + 15 < 200 -> b <= 4
        assert_eq!(StaticPolicy::with_largest_batch(&m, 1, 200.0, 16).allocation, Allocation::new(1, 4));
        assert_eq!(StaticPolicy::with_largest_batch(&m, 1, 10.0, 16).allocation, Allocation::new(1, 1));
    }

    #[test]
    fn horizontal_five_replicas_at_100_rps() {
        let m = model();
        let h = HorizontalPolicy::new(HorizontalParams::default()).unwrap();
        // b = 2 on one core: 97 ms -> 20.6 rps per replica
        assert_eq!(h.target_replicas(100.0, m.throughput(2, 1)), 5);
    }

    #[test]
    fn horizontal_cold_start() {
        let m = model();
        let params = HorizontalParams { b_max: 2, initial_replicas: 5, ..Default::default() };
        let mut p = ScalingPolicy::Horizontal(HorizontalPolicy::new(params).unwrap());
        let empty = QueueSnapshot::default();
        let PolicyAction::Replicas { replicas, batch } = p.decide(&ctx(&m, &empty, 110.0, 0.0)) else {
            panic!()
        };
        assert_eq!(batch, 2);
        assert_eq!(replicas.len(), 6);
        assert_eq!(replicas[5], Replica { id: 5, ready_at_ms: 10_000.0 });
        let ScalingPolicy::Horizontal(h) = &p else { panic!() };
        assert_eq!(h.state.ready_replicas(), 5);

        // still pending halfway through the cold start
        p.decide(&ctx(&m, &empty, 110.0, 5_000.0));
        let ScalingPolicy::Horizontal(h) = &p else { panic!() };
        assert_eq!(h.state.ready_replicas(), 5);
        p.decide(&ctx(&m, &empty, 110.0, 10_000.0));
        let ScalingPolicy::Horizontal(h) = &p else { panic!() };
        assert_eq!(h.state.ready_replicas(), 6);

        // scale down is immediate
        let PolicyAction::Replicas { replicas, .. } = p.decide(&ctx(&m, &empty, 10.0, 11_000.0)) else {
            panic!()
        };
        assert_eq!(replicas.len(), 1);
    }

    #[test]
    fn horizontal_batch_shrinks_with_network_delay() {
        let m = model();
        assert_eq!(HorizontalPolicy::replica_batch(&m, 0.0, 1000.0, 16), 16);
        // 41b + 15 < 500 -> b <= 11
        assert_eq!(HorizontalPolicy::replica_batch(&m, 500.0, 1000.0, 16), 11);
        assert_eq!(HorizontalPolicy::replica_batch(&m, 990.0, 1000.0, 16), 1);
    }

    #[test]
    fn sponge_saturates_at_c_max() {
        let m = model();
        let mut p = ScalingPolicy::Sponge(SpongePolicy::new(ScalerParams::default()).unwrap());
        let hopeless = QueueSnapshot::uniform(3, 999.0, 1000.0);
        assert_eq!(
            p.decide(&ctx(&m, &hopeless, 0.0, 0.0)),
            PolicyAction::Vertical { allocation: Allocation::new(16, 1), saturated: true }
        );
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("sponge".parse(), Ok(PolicySpec::Sponge));
        assert_eq!("static:8".parse(), Ok(PolicySpec::Static { cores: 8, batch: None }));
        assert_eq!("static:8:4".parse(), Ok(PolicySpec::Static { cores: 8, batch: Some(4) }));
        assert_eq!("horizontal".parse(), Ok(PolicySpec::Horizontal));
        assert!("static:0".parse::<PolicySpec>().is_err());
        assert!("vertical".parse::<PolicySpec>().is_err());
        for s in ["sponge", "static:16", "static:2:3", "horizontal"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
    }
}
