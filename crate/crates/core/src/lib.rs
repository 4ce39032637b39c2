//! SLO-aware in-place vertical scaling for a single inference service.
//!
//! The pieces:
//!
//! - [`perf_model`]: latency over (batch, cores), fitted from profiling data.
//! - [`queue`]: the earliest-deadline-first request queue.
//! - [`scaler`]: brute-force (cores, batch) selection per adaptation window.
//! - [`trace`]: bandwidth traces and per-request transfer time.
//! - [`policy`]: vertical, static and horizontal (cold-start) scaling policies.
//! - [`sim`]: the discrete-event simulator tying them together.
//! - [`report`] and [`scenario`]: CSV output and scenario documents.

pub mod perf_model;
pub mod policy;
pub mod queue;
pub mod report;
pub mod scaler;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use perf_model::{fit, LatencyModel, ProfilePoint};
pub use policy::{PolicySpec, ScalingPolicy};
pub use queue::{EdfQueue, QueueSnapshot, Request};
pub use scaler::{check_feasible, estimate_rate, solve, Allocation, RateEstimate, ScalerParams};
pub use sim::{generate_arrivals, run, summarize, Scenario, SimResult};
pub use trace::{comm_latency, remaining_slo, BandwidthTrace};
