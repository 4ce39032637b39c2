//! Per-window (cores, batch) selection.
//!
//! The allocation problem is
//!
//! ```text
//! minimise   c + delta * b
//! subject to l(b, c) + q_r(b, c) + cl_max < SLO   for every queued request
//!            h(b, c) >= lambda
//!            1 <= c <= c_max, 1 <= b <= b_max
//! ```
//!
//! where `q_r` is the waiting time behind earlier batches of the EDF-ordered
//! queue. With at most a few hundred candidate pairs a brute-force sweep is
//! both exact and cheap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_model::LatencyModel;
use crate::queue::QueueSnapshot;

pub const DEFAULT_DELTA_PENALTY: f64 = 0.01;
pub const DEFAULT_C_MAX: u32 = 16;
pub const DEFAULT_B_MAX: u32 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ScalerError {
    #[error("invalid scaler parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible: no (cores, batch) within limits meets the SLO")]
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub c_max: u32,
    pub b_max: u32,
    /// Objective weight on batch size; kept below one so it never outweighs a core.
    pub delta_penalty: f64,
    /// Include `h(b, c) >= lambda`. Off gives the bare latency sweep.
    pub enforce_rate_constraint: bool,
}

impl Default for ScalerParams {
    fn default() -> Self {
        Self {
            c_max: DEFAULT_C_MAX,
            b_max: DEFAULT_B_MAX,
            delta_penalty: DEFAULT_DELTA_PENALTY,
            enforce_rate_constraint: true,
        }
    }
}

impl ScalerParams {
    pub fn new(
        c_max: u32,
        b_max: u32,
        delta_penalty: f64,
        enforce_rate_constraint: bool,
    ) -> Result<Self, ScalerError> {
        let p = Self { c_max, b_max, delta_penalty, enforce_rate_constraint };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ScalerError> {
        if self.c_max < 1 || self.b_max < 1 {
            return Err(ScalerError::InvalidParams("c_max and b_max must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.delta_penalty) {
            return Err(ScalerError::InvalidParams(format!(
                "delta_penalty must be in [0, 1), got {}",
                self.delta_penalty
            )));
        }
        Ok(())
    }

    pub fn objective(&self, alloc: Allocation) -> f64 {
        f64::from(alloc.cores) + self.delta_penalty * f64::from(alloc.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub cores: u32,
    pub batch: u32,
}

impl Allocation {
    pub const fn new(cores: u32, batch: u32) -> Self {
        Self { cores, batch }
    }
}

impl std::fmt::Display for Allocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cores={} batch={}", self.cores, self.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub lambda_rps: f64,
    pub window_ms: f64,
}

impl RateEstimate {
    pub fn from_rps(lambda_rps: f64) -> Self {
        Self { lambda_rps, window_ms: 1000.0 }
    }
}

/// Counts arrivals in the half-open window `(now - window, now]`.
pub fn estimate_rate(arrival_times_ms: &[f64], now_ms: f64, window_ms: f64) -> RateEstimate {
    assert!(window_ms > 0.0, "window must be positive");
    let lo = now_ms - window_ms;
    let count = arrival_times_ms.iter().filter(|&&t| t > lo && t <= now_ms).count();
    RateEstimate {
        lambda_rps: count as f64 / (window_ms / 1000.0),
        window_ms,
    }
}

/// Whether every batch of the queued requests finishes inside the SLO under
/// `(cores, batch)`, and (optionally) whether throughput keeps up with `lambda`.
///
/// Batch `i` waits `i` processing latencies; every batch is charged the
/// queue-wide `cl_max`. Rejection happens at `>= slo_ms`.
pub fn check_feasible(
    model: &LatencyModel,
    cores: u32,
    batch: u32,
    snap: &QueueSnapshot,
    slo_ms: f64,
    lambda: &RateEstimate,
    params: &ScalerParams,
) -> bool {
    let latency = model.predict_latency(batch, cores);
    let batch = batch as usize;
    let mut waited = 0.0;
    for _ in (0..snap.len()).step_by(batch) {
        if latency + snap.cl_max_ms + waited >= slo_ms {
            return false;
        }
        waited += latency;
    }
    !params.enforce_rate_constraint || model.throughput(batch as u32, cores) >= lambda.lambda_rps
}

/// Cheapest feasible allocation by `c + delta * b`, ties to fewer cores then
/// smaller batch.
pub fn solve(
    model: &LatencyModel,
    snap: &QueueSnapshot,
    slo_ms: f64,
    lambda: &RateEstimate,
    params: &ScalerParams,
) -> Result<Allocation, ScalerError> {
    params.validate()?;
    if !(slo_ms > snap.cl_max_ms) {
        return Err(ScalerError::Infeasible);
    }
    let mut best: Option<(f64, Allocation)> = None;
    for cores in 1..=params.c_max {
        if let Some((obj, _)) = best {
            // every later candidate costs at least `cores`
            if f64::from(cores) > obj {
                break;
            }
        }
        // delta >= 0, so the first feasible batch is the cheapest for this c
        let first = (1..=params.b_max)
            .find(|&b| check_feasible(model, cores, b, snap, slo_ms, lambda, params));
        if let Some(batch) = first {
            let alloc = Allocation::new(cores, batch);
            let obj = params.objective(alloc);
            if best.is_none_or(|(b, _)| obj < b) {
                best = Some((obj, alloc));
            }
        }
    }
    best.map(|(_, a)| a).ok_or(ScalerError::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> LatencyModel {
        LatencyModel::new(40.0, 15.0, 1.0, 0.0).unwrap()
    }

    fn no_rate() -> RateEstimate {
        RateEstimate::from_rps(0.0)
    }

    #[test]
    fn single_batch_fits_two_batches_do_not() {
        let p = ScalerParams::default();
        let two = QueueSnapshot::uniform(2, 0.0, 100.0);
        assert!(check_feasible(&model(), 1, 2, &two, 100.0, &no_rate(), &p));
        let four = QueueSnapshot::uniform(4, 0.0, 100.0);
        assert!(!check_feasible(&model(), 1, 2, &four, 100.0, &no_rate(), &p));
    }

    #[test]
    fn rejection_is_at_equality() {
        let p = ScalerParams::default();
        let one = QueueSnapshot::uniform(1, 0.0, 56.0);
        assert!(!check_feasible(&model(), 1, 1, &one, 56.0, &no_rate(), &p));
        assert!(check_feasible(&model(), 1, 1, &one, 56.0 + 1e-9, &no_rate(), &p));
    }

    #[test]
    fn rate_constraint_toggle() {
        let empty = QueueSnapshot::default();
        let lambda = RateEstimate::from_rps(20.0);
        let on = ScalerParams::default();
        let off = ScalerParams { enforce_rate_constraint: false, ..on };
        // l(1,1) = 56 ms -> 17.9 rps < 20
        assert!(!check_feasible(&model(), 1, 1, &empty, 1000.0, &lambda, &on));
        assert!(check_feasible(&model(), 1, 1, &empty, 1000.0, &lambda, &off));
        assert_eq!(solve(&model(), &empty, 1000.0, &lambda, &on), Ok(Allocation::new(1, 2)));
    }

    #[test]
    fn empty_queue_gets_minimum() {
        let a = solve(&model(), &QueueSnapshot::default(), 1000.0, &no_rate(), &ScalerParams::default());
        assert_eq!(a, Ok(Allocation::new(1, 1)));
    }

    #[test]
    fn worked_example_two_requests_slo_60() {
        let snap = QueueSnapshot::uniform(2, 0.0, 60.0);
        let a = solve(&model(), &snap, 60.0, &no_rate(), &ScalerParams::default());
        assert_eq!(a, Ok(Allocation::new(2, 1)));
    }

    #[test]
    fn no_budget_is_infeasible() {
        let snap = QueueSnapshot::uniform(1, 9.99, 10.0);
        let a = solve(&model(), &snap, 10.0, &no_rate(), &ScalerParams::default());
        assert_eq!(a, Err(ScalerError::Infeasible));
        let snap = QueueSnapshot::uniform(1, 10.0, 10.0);
        assert_eq!(
            solve(&model(), &snap, 10.0, &no_rate(), &ScalerParams::default()),
            Err(ScalerError::Infeasible)
        );
    }

    #[test]
    fn large_delta_prefers_fewer_batches_over_core_order() {
        // With delta large enough, (c, b) order and objective order diverge.
        let snap = QueueSnapshot::uniform(8, 0.0, 400.0);
        let p = ScalerParams::new(16, 16, 0.9, false).unwrap();
        let a = solve(&model(), &snap, 400.0, &no_rate(), &p).unwrap();
        let obj = p.objective(a);
        for c in 1..=16 {
            for b in 1..=16 {
                if check_feasible(&model(), c, b, &snap, 400.0, &no_rate(), &p) {
                    assert!(p.objective(Allocation::new(c, b)) >= obj);
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(ScalerParams::new(0, 16, 0.01, true).is_err());
        assert!(ScalerParams::new(16, 16, 1.0, true).is_err());
        assert!(ScalerParams::new(16, 16, -0.1, true).is_err());
        assert!(ScalerParams::new(16, 16, 0.0, true).is_ok());
    }

    #[test]
    fn rate_window_is_half_open() {
        let arrivals: Vec<f64> = (0..20).map(|i| 50.0 * i as f64 + 25.0).collect();
        assert_eq!(estimate_rate(&arrivals, 1000.0, 1000.0).lambda_rps, 20.0);
        assert_eq!(estimate_rate(&[], 1000.0, 1000.0).lambda_rps, 0.0);
        assert_eq!(estimate_rate(&[0.0], 1000.0, 1000.0).lambda_rps, 0.0);
        assert_eq!(estimate_rate(&[1000.0], 1000.0, 1000.0).lambda_rps, 1.0);
        assert_eq!(estimate_rate(&[10.0, 20.0], 1000.0, 500.0).lambda_rps, 0.0);
    }
}
