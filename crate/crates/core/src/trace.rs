//! Bandwidth traces and the request-level network model.
//!
//! Units are decimal: 1 MB = 1000 KB. A trace is a step function holding each
//! sample's bandwidth until the next sample.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("line {line}: time {t_s} s does not increase")]
    NonMonotonicTime { line: usize, t_s: f64 },
    #[error("line {line}: bandwidth {bandwidth_mbps} MB/s must be positive")]
    NonPositiveBandwidth { line: usize, bandwidth_mbps: f64 },
    #[error("invalid synthetic trace spec: {0}")]
    Synthetic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSample {
    pub t_s: f64,
    pub bandwidth_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    samples: Vec<BandwidthSample>,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<BandwidthSample>) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::EmptyTrace);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t_s >= 0.0) || !s.t_s.is_finite() {
                return Err(TraceError::Parse {
                    line: i + 1,
                    msg: format!("time must be finite and non-negative, got {}", s.t_s),
                });
            }
            if !(s.bandwidth_mbps > 0.0) || !s.bandwidth_mbps.is_finite() {
                return Err(TraceError::NonPositiveBandwidth {
                    line: i + 1,
                    bandwidth_mbps: s.bandwidth_mbps,
                });
            }
            if i > 0 && s.t_s <= samples[i - 1].t_s {
                return Err(TraceError::NonMonotonicTime { line: i + 1, t_s: s.t_s });
            }
        }
        Ok(Self { samples })
    }

    /// A single constant-bandwidth sample.
    pub fn constant(bandwidth_mbps: f64) -> Result<Self, TraceError> {
        Self::new(vec![BandwidthSample { t_s: 0.0, bandwidth_mbps }])
    }

    pub fn samples(&self) -> &[BandwidthSample] {
        &self.samples
    }

    /// Step-hold lookup; clamps to the first sample before the trace starts
    /// and holds the last sample past its end.
    pub fn bandwidth_at(&self, t_s: f64) -> f64 {
        let idx = self.samples.partition_point(|s| s.t_s <= t_s);
        self.samples[idx.saturating_sub(1)].bandwidth_mbps
    }

    pub fn min_bandwidth(&self) -> f64 {
        self.samples.iter().map(|s| s.bandwidth_mbps).fold(f64::INFINITY, f64::min)
    }

    pub fn max_bandwidth(&self) -> f64 {
        self.samples.iter().map(|s| s.bandwidth_mbps).fold(0.0, f64::max)
    }

    /// CSV with header `t_s,bandwidth_mbps`; floats are printed round-trip exact.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,bandwidth_mbps\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.t_s, s.bandwidth_mbps);
        }
        out
    }
}

impl FromStr for BandwidthTrace {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_trace(s)
    }
}

/// Parses `t_s,bandwidth_mbps` lines. A header and `#` comments are allowed.
pub fn parse_trace(text: &str) -> Result<BandwidthTrace, TraceError> {
    let mut samples: Vec<BandwidthSample> = Vec::new();
    let mut first_data = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if first_data {
            first_data = false;
            if fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
                if fields == ["t_s", "bandwidth_mbps"] {
                    continue;
                }
                return Err(TraceError::Parse {
                    line,
                    msg: format!("expected header `t_s,bandwidth_mbps` or data, got `{content}`"),
                });
            }
        }
        if fields.len() != 2 {
            return Err(TraceError::Parse {
                line,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let t_s: f64 = fields[0].parse().map_err(|_| TraceError::Parse {
            line,
            msg: format!("invalid time `{}`", fields[0]),
        })?;
        let bandwidth_mbps: f64 = fields[1].parse().map_err(|_| TraceError::Parse {
            line,
            msg: format!("invalid bandwidth `{}`", fields[1]),
        })?;
        if !(t_s >= 0.0) || !t_s.is_finite() {
            return Err(TraceError::Parse { line, msg: format!("invalid time {t_s}") });
        }
        if !(bandwidth_mbps > 0.0) || !bandwidth_mbps.is_finite() {
            return Err(TraceError::NonPositiveBandwidth { line, bandwidth_mbps });
        }
        if samples.last().is_some_and(|prev| t_s <= prev.t_s) {
            return Err(TraceError::NonMonotonicTime { line, t_s });
        }
        samples.push(BandwidthSample { t_s, bandwidth_mbps });
    }
    BandwidthTrace::new(samples)
}

/// Transfer time in ms of `size_kb` over `bandwidth_mbps`.
pub fn comm_latency(size_kb: f64, bandwidth_mbps: f64) -> f64 {
    size_kb / (bandwidth_mbps * 1000.0) * 1000.0
}

/// Budget left for queuing plus processing; zero or negative means the
/// request is already late when it reaches the server.
pub fn remaining_slo(slo_ms: f64, comm_latency_ms: f64) -> f64 {
    slo_ms - comm_latency_ms
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Alternates `high` and `low`, each for half a period, starting high.
    Square,
    /// `mid + amp * cos(2πt / period)`, starting at `high`.
    Sinusoid,
    /// `high` until `period` seconds, `low` afterwards.
    Step,
}

/// Parameters for a generated 1 Hz trace, written `shape=step,low=0.5,high=7,period=60`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrace {
    pub shape: Shape,
    pub low: f64,
    pub high: f64,
    pub period_s: f64,
    #[serde(default)]
    pub duration_s: Option<f64>,
}

impl SyntheticTrace {
    /// Samples once per second over `[0, duration_s]`.
    pub fn generate(&self, duration_s: f64) -> Result<BandwidthTrace, TraceError> {
        self.validate()?;
        let duration_s = self.duration_s.unwrap_or(duration_s).max(0.0);
        let n = duration_s.ceil() as usize + 1;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64;
                BandwidthSample { t_s: t, bandwidth_mbps: self.value_at(t) }
            })
            .collect();
        BandwidthTrace::new(samples)
    }

    fn value_at(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Square => {
                let phase = (t / self.period_s).fract();
                if phase < 0.5 {
                    self.high
                } else {
                    self.low
                }
            }
            Shape::Sinusoid => {
                let mid = 0.5 * (self.high + self.low);
                let amp = 0.5 * (self.high - self.low);
                mid + amp * (std::f64::consts::TAU * t / self.period_s).cos()
            }
            Shape::Step => {
                if t < self.period_s {
                    self.high
                } else {
                    self.low
                }
            }
        }
    }

    fn validate(&self) -> Result<(), TraceError> {
        if !(self.low > 0.0) || !(self.high >= self.low) {
            return Err(TraceError::Synthetic(format!(
                "need 0 < low <= high, got low={} high={}",
                self.low, self.high
            )));
        }
        if !(self.period_s > 0.0) {
            return Err(TraceError::Synthetic(format!("period must be positive, got {}", self.period_s)));
        }
        Ok(())
    }
}

impl FromStr for SyntheticTrace {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut shape = None;
        let (mut low, mut high, mut period, mut duration) = (None, None, None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| TraceError::Synthetic(format!("expected key=value, got `{part}`")))?;
            let num = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| TraceError::Synthetic(format!("invalid number for {key}: `{value}`")))
            };
            match key.trim() {
                "shape" => {
                    shape = Some(match value.trim() {
                        "square" => Shape::Square,
                        "sinusoid" | "sine" => Shape::Sinusoid,
                        "step" => Shape::Step,
                        other => return Err(TraceError::Synthetic(format!("unknown shape `{other}`"))),
                    })
                }
                "low" => low = Some(num()?),
                "high" => high = Some(num()?),
                "period" => period = Some(num()?),
                "duration" => duration = Some(num()?),
                other => return Err(TraceError::Synthetic(format!("unknown key `{other}`"))),
            }
        }
        let spec = SyntheticTrace {
            shape: shape.ok_or_else(|| TraceError::Synthetic("missing shape".into()))?,
            low: low.ok_or_else(|| TraceError::Synthetic("missing low".into()))?,
            high: high.ok_or_else(|| TraceError::Synthetic("missing high".into()))?,
            period_s: period.ok_or_else(|| TraceError::Synthetic("missing period".into()))?,
            duration_s: duration,
        };
        spec.validate()?;
        Ok(spec)
    }
}
