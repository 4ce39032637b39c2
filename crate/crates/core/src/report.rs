//! Plot-ready CSV output for simulation results.
//!
//! Per-request: `id,send_ms,comm_ms,queue_ms,proc_ms,e2e_ms,violated,cores,batch`
//! Per-window:  `t_ms,cores,batch,violations`
//!
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces the written values exactly.

use std::fmt::Write as _;

use thiserror::Error;

use crate::scaler::Allocation;
use crate::sim::{RequestOutcome, WindowRecord};

pub const REQUESTS_HEADER: &str = "id,send_ms,comm_ms,queue_ms,proc_ms,e2e_ms,violated,cores,batch";
pub const WINDOWS_HEADER: &str = "t_ms,cores,batch,violations";

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn requests_csv(outcomes: &[RequestOutcome]) -> String {
    let mut out = String::with_capacity(64 * (outcomes.len() + 1));
    out.push_str(REQUESTS_HEADER);
    out.push('\n');
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            o.id,
            o.send_time_ms,
            o.comm_latency_ms,
            o.queue_latency_ms,
            o.processing_latency_ms,
            o.e2e_latency_ms,
            u8::from(o.violated),
            o.allocation_at_service.cores,
            o.allocation_at_service.batch
        );
    }
    out
}

pub fn windows_csv(windows: &[WindowRecord]) -> String {
    let mut out = String::from(WINDOWS_HEADER);
    out.push('\n');
    for w in windows {
        let _ = writeln!(out, "{},{},{},{}", w.window_start_ms, w.cores_allocated, w.allocation.batch, w.violations);
    }
    out
}

fn rows<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => {
            return Err(ReportError::Parse { line: 1, msg: format!("expected header `{header}`, got `{h}`") })
        }
        None => return Err(ReportError::Parse { line: 1, msg: "missing header".into() }),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn field<T: std::str::FromStr>(line: usize, fields: &[&str], i: usize, name: &str) -> Result<T, ReportError> {
    fields
        .get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ReportError::Parse { line, msg: format!("invalid or missing `{name}`") })
}

pub fn parse_requests_csv(text: &str) -> Result<Vec<RequestOutcome>, ReportError> {
    let mut out = Vec::new();
    for (line, f) in rows(text, REQUESTS_HEADER)? {
        if f.len() != 9 {
            return Err(ReportError::Parse { line, msg: format!("expected 9 fields, got {}", f.len()) });
        }
        let violated: u8 = field(line, &f, 6, "violated")?;
        out.push(RequestOutcome {
            id: field(line, &f, 0, "id")?,
            send_time_ms: field(line, &f, 1, "send_ms")?,
            comm_latency_ms: field(line, &f, 2, "comm_ms")?,
            queue_latency_ms: field(line, &f, 3, "queue_ms")?,
            processing_latency_ms: field(line, &f, 4, "proc_ms")?,
            e2e_latency_ms: field(line, &f, 5, "e2e_ms")?,
            violated: violated != 0,
            allocation_at_service: Allocation::new(field(line, &f, 7, "cores")?, field(line, &f, 8, "batch")?),
        });
    }
    Ok(out)
}

pub fn parse_windows_csv(text: &str) -> Result<Vec<WindowRecord>, ReportError> {
    let mut out = Vec::new();
    for (line, f) in rows(text, WINDOWS_HEADER)? {
        if f.len() != 4 {
            return Err(ReportError::Parse { line, msg: format!("expected 4 fields, got {}", f.len()) });
        }
        let cores: u32 = field(line, &f, 1, "cores")?;
        out.push(WindowRecord {
            window_start_ms: field(line, &f, 0, "t_ms")?,
            allocation: Allocation::new(cores, field(line, &f, 2, "batch")?),
            violations: field(line, &f, 3, "violations")?,
            cores_allocated: cores,
        });
    }
    Ok(out)
}
