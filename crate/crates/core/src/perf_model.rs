//! Latency model over batch size and CPU cores.
//!
//! Processing latency is modelled as a batch-linear term whose slope and
//! intercept both shrink inversely with cores (an Amdahl-style parallel part
//! plus a serial remainder):
//!
//! ```text
//! l(b, c) = gamma * b / c + epsilon / c + delta * b + eta      [ms]
//! ```
//!
//! At a fixed batch size this reduces to `alpha / c + beta` with
//! `alpha = gamma * b + epsilon` and `beta = delta * b + eta`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of profile points needed to pin four coefficients.
pub const MIN_PROFILE_POINTS: usize = 4;

const BASIS_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("non-positive latency {latency_ms} ms at cores={cores} batch={batch}")]
    NonPositiveLatency { cores: u32, batch: u32, latency_ms: f64 },
    #[error("invalid profile point: cores and batch must be >= 1 (got cores={cores} batch={batch})")]
    InvalidPoint { cores: u32, batch: u32 },
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One profiled configuration and its observed processing latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub cores: u32,
    pub batch: u32,
    pub latency_ms: f64,
}

impl ProfilePoint {
    pub fn new(cores: u32, batch: u32, latency_ms: f64) -> Self {
        Self { cores, batch, latency_ms }
    }

    fn basis(&self) -> [f64; BASIS_LEN] {
        let b = f64::from(self.batch);
        let c = f64::from(self.cores);
        [b / c, 1.0 / c, b, 1.0]
    }
}

/// Fitted coefficients of the batch/cores latency model, all in milliseconds
/// (gamma and epsilon are per core).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    gamma: f64,
    epsilon: f64,
    delta: f64,
    eta: f64,
}

impl LatencyModel {
    pub fn new(gamma: f64, epsilon: f64, delta: f64, eta: f64) -> Result<Self, ModelError> {
        let coeffs = [gamma, epsilon, delta, eta];
        if coeffs.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::InvalidCoefficients(format!(
                "coefficients must be finite and non-negative, got {coeffs:?}"
            )));
        }
        if coeffs.iter().sum::<f64>() <= 0.0 {
            return Err(ModelError::InvalidCoefficients(
                "all coefficients are zero".to_string(),
            ));
        }
        Ok(Self { gamma, epsilon, delta, eta })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.gamma, self.epsilon, self.delta, self.eta]
    }

    /// Predicted processing latency in ms of one batch of `batch` requests on
    /// `cores` cores.
    pub fn predict_latency(&self, batch: u32, cores: u32) -> f64 {
        assert!(batch >= 1 && cores >= 1, "batch and cores must be >= 1");
        let b = f64::from(batch);
        let c = f64::from(cores);
        self.gamma * b / c + self.epsilon / c + self.delta * b + self.eta
    }

    /// Requests per second sustained when running back-to-back batches.
    pub fn throughput(&self, batch: u32, cores: u32) -> f64 {
        1000.0 * f64::from(batch) / self.predict_latency(batch, cores)
    }

    /// Parallelisable part at a fixed batch size (`alpha` in `alpha / c + beta`).
    pub fn parallel_ms(&self, batch: u32) -> f64 {
        self.gamma * f64::from(batch) + self.epsilon
    }

    /// Serial part at a fixed batch size; the latency floor as cores grow.
    pub fn serial_ms(&self, batch: u32) -> f64 {
        self.delta * f64::from(batch) + self.eta
    }

    /// Mean absolute percentage error over `points`, as a fraction.
    pub fn mape(&self, points: &[ProfilePoint]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let total: f64 = points.iter().map(|p| self.relative_error(p)).sum();
        total / points.len() as f64
    }

    pub fn relative_error(&self, p: &ProfilePoint) -> f64 {
        (self.predict_latency(p.batch, p.cores) - p.latency_ms).abs() / p.latency_ms
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "l(b,c) = {:.4}*b/c + {:.4}/c + {:.4}*b + {:.4}",
            self.gamma, self.epsilon, self.delta, self.eta
        )
    }
}

/// Least-squares fit of the latency model with iterative non-negativity
/// clamping: negative coefficients are pinned to zero and the remaining free
/// ones re-solved until none is negative.
pub fn fit(points: &[ProfilePoint]) -> Result<LatencyModel, ModelError> {
    for p in points {
        if p.cores == 0 || p.batch == 0 {
            return Err(ModelError::InvalidPoint { cores: p.cores, batch: p.batch });
        }
        if !(p.latency_ms > 0.0) || !p.latency_ms.is_finite() {
            return Err(ModelError::NonPositiveLatency {
                cores: p.cores,
                batch: p.batch,
                latency_ms: p.latency_ms,
            });
        }
    }
    if points.len() < MIN_PROFILE_POINTS {
        return Err(ModelError::InsufficientData(format!(
            "need at least {MIN_PROFILE_POINTS} points, got {}",
            points.len()
        )));
    }
    let distinct_cores: BTreeSet<u32> = points.iter().map(|p| p.cores).collect();
    let distinct_batches: BTreeSet<u32> = points.iter().map(|p| p.batch).collect();
    if distinct_cores.len() < 2 || distinct_batches.len() < 2 {
        return Err(ModelError::InsufficientData(
            "need at least two distinct core counts and two distinct batch sizes".to_string(),
        ));
    }

    let rows: Vec<[f64; BASIS_LEN]> = points.iter().map(ProfilePoint::basis).collect();
    let target = DVector::from_iterator(points.len(), points.iter().map(|p| p.latency_ms));

    let mut free = [true; BASIS_LEN];
    let coeffs = loop {
        let cols: Vec<usize> = (0..BASIS_LEN).filter(|&j| free[j]).collect();
        if cols.is_empty() {
            return Err(ModelError::InsufficientData(
                "every coefficient clamped to zero".to_string(),
            ));
        }
        let design = DMatrix::from_fn(rows.len(), cols.len(), |i, k| rows[i][cols[k]]);
        let solution = least_squares(design, &target)?;
        let mut coeffs = [0.0; BASIS_LEN];
        for (k, &j) in cols.iter().enumerate() {
            coeffs[j] = solution[k];
        }
        let negative: Vec<usize> = cols.iter().copied().filter(|&j| coeffs[j] < 0.0).collect();
        if negative.is_empty() {
            break coeffs;
        }
        for j in negative {
            free[j] = false;
        }
    };

    if coeffs.iter().sum::<f64>() <= 0.0 {
        return Err(ModelError::InsufficientData(
            "fit produced an all-zero model".to_string(),
        ));
    }
    LatencyModel::new(coeffs[0], coeffs[1], coeffs[2], coeffs[3])
}

fn least_squares(design: DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let ncols = design.ncols();
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10 * (target.len().max(ncols) as f64);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < ncols {
        return Err(ModelError::InsufficientData(format!(
            "rank-deficient design: rank {rank} < {ncols} coefficients"
        )));
    }
    svd.solve(target, tol)
        .map_err(|e| ModelError::InsufficientData(e.to_string()))
}

/// Parses a profile CSV with header `cores,batch,latency_ms`.
pub fn parse_profile_csv<R: Read>(mut reader: R) -> Result<Vec<ProfilePoint>, ModelError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut points = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols == ["cores", "batch", "latency_ms"] {
                continue;
            }
            if cols.first().is_some_and(|c| c.parse::<f64>().is_err()) {
                return Err(ModelError::Parse {
                    line: line_no,
                    msg: format!("expected header `cores,batch,latency_ms`, got `{line}`"),
                });
            }
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(ModelError::Parse {
                line: line_no,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str, v: &str| ModelError::Parse {
            line: line_no,
            msg: format!("invalid {what} `{v}`"),
        };
        let cores: u32 = fields[0].parse().map_err(|_| parse_err("cores", fields[0]))?;
        let batch: u32 = fields[1].parse().map_err(|_| parse_err("batch", fields[1]))?;
        let latency_ms: f64 = fields[2].parse().map_err(|_| parse_err("latency_ms", fields[2]))?;
        points.push(ProfilePoint { cores, batch, latency_ms });
    }
    Ok(points)
}

/// Bounding box of the profiled configurations; predictions outside it are
/// extrapolations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfiledRange {
    pub max_cores: u32,
    pub max_batch: u32,
}

impl ProfiledRange {
    pub fn of(points: &[ProfilePoint]) -> Option<Self> {
        let max_cores = points.iter().map(|p| p.cores).max()?;
        let max_batch = points.iter().map(|p| p.batch).max()?;
        Some(Self { max_cores, max_batch })
    }

    pub fn contains(&self, batch: u32, cores: u32) -> bool {
        batch <= self.max_batch && cores <= self.max_cores
    }
}

/// On-disk model document: flat `gamma`, `epsilon`, `delta`, `eta` keys, plus
/// optional `profiled_max_cores` / `profiled_max_batch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiled_max_cores: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiled_max_batch: Option<u32>,
}

impl ModelFile {
    pub fn new(model: &LatencyModel, range: Option<ProfiledRange>) -> Self {
        Self {
            gamma: model.gamma,
            epsilon: model.epsilon,
            delta: model.delta,
            eta: model.eta,
            profiled_max_cores: range.map(|r| r.max_cores),
            profiled_max_batch: range.map(|r| r.max_batch),
        }
    }

    pub fn model(&self) -> Result<LatencyModel, ModelError> {
        LatencyModel::new(self.gamma, self.epsilon, self.delta, self.eta)
    }

    pub fn range(&self) -> Option<ProfiledRange> {
        Some(ProfiledRange {
            max_cores: self.profiled_max_cores?,
            max_batch: self.profiled_max_batch?,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat model document always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Table 1 profile of the ResNet human detector (cores, batch, latency ms).
pub fn table1_profile() -> Vec<ProfilePoint> {
    [(1, 1, 55.0), (1, 2, 97.0), (2, 4, 94.0), (4, 8, 92.0), (8, 4, 37.0), (8, 8, 62.0)]
        .into_iter()
        .map(|(c, b, l)| ProfilePoint::new(c, b, l))
        .collect()
}
