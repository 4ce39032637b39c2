//! Earliest-deadline-first request queue.
//!
//! A request's deadline is anchored to its arrival at the server:
//! `arrival + (slo - comm_latency)`, i.e. the time left after the network
//! transfer. Ties fall back to arrival time and then id so replays are
//! deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RequestId = u64;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("request {0} is already queued")]
    DuplicateId(RequestId),
    #[error("request {id} arrives at {arrival_ms} ms, after now ({now_ms} ms)")]
    ArrivalInFuture { id: RequestId, arrival_ms: f64, now_ms: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    /// When the request reached the server queue.
    pub arrival_time_ms: f64,
    /// Network transfer time already spent before `arrival_time_ms`.
    pub comm_latency_ms: f64,
    pub slo_ms: f64,
    pub size_kb: f64,
}

impl Request {
    pub fn deadline_ms(&self) -> f64 {
        self.arrival_time_ms + (self.slo_ms - self.comm_latency_ms)
    }

    /// Time budget left for queuing and processing once the request is at the server.
    pub fn remaining_budget_ms(&self) -> f64 {
        self.slo_ms - self.comm_latency_ms
    }

    pub fn is_dead_on_arrival(&self) -> bool {
        self.remaining_budget_ms() <= 0.0
    }

    fn edf_key(&self) -> EdfKey {
        EdfKey {
            deadline_ms: self.deadline_ms(),
            arrival_ms: self.arrival_time_ms,
            id: self.id,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct EdfKey {
    deadline_ms: f64,
    arrival_ms: f64,
    id: RequestId,
}

impl Ord for EdfKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.deadline_ms
            .total_cmp(&other.deadline_ms)
            .then(self.arrival_ms.total_cmp(&other.arrival_ms))
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for EdfKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for EdfKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for EdfKey {}

/// Immutable copy of the queue handed to the scaler.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueueSnapshot {
    pub requests: Vec<Request>,
    pub cl_max_ms: f64,
}

impl QueueSnapshot {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Snapshot of `n` identical requests with the given communication latency;
    /// handy for one-shot solves where only the count and `cl_max` matter.
    pub fn uniform(n: usize, comm_latency_ms: f64, slo_ms: f64) -> Self {
        let requests = (0..n as u64)
            .map(|id| Request {
                id,
                arrival_time_ms: 0.0,
                comm_latency_ms,
                slo_ms,
                size_kb: 1.0,
            })
            .collect();
        Self {
            requests,
            cl_max_ms: if n == 0 { 0.0 } else { comm_latency_ms },
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct EdfQueue {
    entries: BTreeMap<EdfKey, Request>,
    ids: HashSet<RequestId>,
}

impl EdfQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, request: Request, now_ms: f64) -> Result<(), QueueError> {
        if request.arrival_time_ms > now_ms {
            return Err(QueueError::ArrivalInFuture {
                id: request.id,
                arrival_ms: request.arrival_time_ms,
                now_ms,
            });
        }
        if !self.ids.insert(request.id) {
            return Err(QueueError::DuplicateId(request.id));
        }
        self.entries.insert(request.edf_key(), request);
        Ok(())
    }

    /// Removes up to `batch_size` requests from the head of the queue.
    pub fn drain_batch(&mut self, batch_size: usize, _now_ms: f64) -> Vec<Request> {
        assert!(batch_size >= 1, "batch size must be >= 1");
        let take = batch_size.min(self.entries.len());
        let mut out = Vec::with_capacity(take);
        for _ in 0..take {
            let (_, req) = self.entries.pop_first().expect("length checked");
            self.ids.remove(&req.id);
            out.push(req);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &Request> {
        self.entries.values()
    }

    pub fn cl_max_ms(&self) -> f64 {
        self.iter().map(|r| r.comm_latency_ms).fold(0.0, f64::max)
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            requests: self.iter().copied().collect(),
            cl_max_ms: self.cl_max_ms(),
        }
    }
}
