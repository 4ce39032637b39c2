//! Scenario documents and multi-policy experiments.
//!
//! A scenario file is flat TOML:
//!
//! ```toml
//! duration_s = 600
//! rate_rps = 20
//! arrival_mode = "fixed"            # or "poisson"
//! request_size_kb = 200
//! slo_ms = 1000
//! adaptation_period_ms = 1000
//! seed = 42
//! synthetic_trace = "shape=square,low=0.5,high=7,period=60"   # or trace = "bw.csv"
//! model = "model.toml"              # or inline gamma/epsilon/delta/eta
//! policies = ["sponge", "static:16"]
//! c_max = 16
//! b_max = 16
//! ```
//!
//! Relative paths resolve against the scenario file's directory. Without a
//! model the Table 1 fit is used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_model::{self, LatencyModel, ModelError, ModelFile, ProfiledRange};
use crate::policy::{HorizontalParams, PolicyError, PolicySpec};
use crate::scaler::{ScalerError, ScalerParams};
use crate::sim::{self, ArrivalMode, Scenario, SimError, SimResult};
use crate::trace::{self, SyntheticTrace, TraceError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ScenarioError {
    /// Whether this is an I/O or parse problem rather than a bad value.
    pub fn is_io_or_parse(&self) -> bool {
        matches!(
            self,
            ScenarioError::Io { .. }
                | ScenarioError::Format(_)
                | ScenarioError::Trace(TraceError::Parse { .. })
                | ScenarioError::Model(ModelError::Parse { .. } | ModelError::Io(_))
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub duration_s: Option<f64>,
    pub rate_rps: Option<f64>,
    pub arrival_mode: Option<ArrivalMode>,
    pub request_size_kb: Option<f64>,
    pub slo_ms: Option<f64>,
    pub adaptation_period_ms: Option<f64>,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub synthetic_trace: Option<String>,
    pub model: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub policies: Option<Vec<String>>,
    pub c_max: Option<u32>,
    pub b_max: Option<u32>,
    pub delta_penalty: Option<f64>,
    pub enforce_rate_constraint: Option<bool>,
    pub cold_start_ms: Option<f64>,
    pub headroom: Option<f64>,
    pub resize_delay_ms: Option<f64>,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| perf_model::line_of(text, s.start)).unwrap_or(0);
            ScenarioError::Format(format!("line {line}: {}", e.message()))
        })
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml(&text)?, base))
    }

    /// Fields set in `other` override fields set here.
    pub fn merge(self, other: ScenarioFile) -> ScenarioFile {
        macro_rules! pick {
            ($($f:ident),*) => { ScenarioFile { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            duration_s, rate_rps, arrival_mode, request_size_kb, slo_ms, adaptation_period_ms, seed,
            trace, synthetic_trace, model, gamma, epsilon, delta, eta, policies, c_max, b_max,
            delta_penalty, enforce_rate_constraint, cold_start_ms, headroom, resize_delay_ms
        )
    }

    pub fn resolve(&self, base_dir: &Path) -> Result<Experiment, ScenarioError> {
        let resolve_path = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let duration_s = self.duration_s.unwrap_or(600.0);

        let (model, profiled_range) = match (&self.model, self.gamma, self.epsilon, self.delta, self.eta) {
            (Some(_), Some(_), ..) | (Some(_), _, Some(_), ..) => {
                return Err(ScenarioError::Invalid("give either a model file or inline coefficients".into()))
            }
            (Some(path), ..) => {
                let doc = ModelFile::load(&resolve_path(path))?;
                (doc.model()?, doc.range())
            }
            (None, None, None, None, None) => {
                let points = perf_model::table1_profile();
                (perf_model::fit(&points)?, ProfiledRange::of(&points))
            }
            (None, g, e, d, h) => (
                LatencyModel::new(g.unwrap_or(0.0), e.unwrap_or(0.0), d.unwrap_or(0.0), h.unwrap_or(0.0))?,
                None,
            ),
        };

        let trace = match (&self.trace, &self.synthetic_trace) {
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Invalid("give either trace or synthetic_trace, not both".into()))
            }
            (Some(path), None) => {
                let path = resolve_path(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
                trace::parse_trace(&text)?
            }
            (None, Some(spec)) => spec.parse::<SyntheticTrace>()?.generate(duration_s)?,
            (None, None) => {
                return Err(ScenarioError::Invalid("a trace or synthetic_trace is required".into()))
            }
        };

        let scaler = ScalerParams::new(
            self.c_max.unwrap_or(crate::scaler::DEFAULT_C_MAX),
            self.b_max.unwrap_or(crate::scaler::DEFAULT_B_MAX),
            self.delta_penalty.unwrap_or(crate::scaler::DEFAULT_DELTA_PENALTY),
            self.enforce_rate_constraint.unwrap_or(true),
        )?;
        let horizontal = HorizontalParams {
            cold_start_ms: self.cold_start_ms.unwrap_or(crate::policy::DEFAULT_COLD_START_MS),
            headroom: self.headroom.unwrap_or(1.0),
            b_max: scaler.b_max,
            ..HorizontalParams::default()
        };
        let policies = self
            .policies
            .clone()
            .unwrap_or_else(|| vec!["sponge".to_string()])
            .iter()
            .map(|p| p.parse::<PolicySpec>())
            .collect::<Result<Vec<_>, _>>()?;
        if policies.is_empty() {
            return Err(ScenarioError::Invalid("at least one policy is required".into()));
        }

        let scenario = Scenario {
            duration_s,
            rate_rps: self.rate_rps.unwrap_or(20.0),
            arrival_mode: self.arrival_mode.unwrap_or_default(),
            request_size_kb: self.request_size_kb.unwrap_or(200.0),
            slo_ms: self.slo_ms.unwrap_or(1000.0),
            trace,
            model,
            adaptation_period_ms: self.adaptation_period_ms.unwrap_or(1000.0),
            seed: self.seed.unwrap_or(0),
            resize_delay_ms: self.resize_delay_ms.unwrap_or(0.0),
        };
        scenario.validate()?;
        Ok(Experiment { scenario, policies, scaler, horizontal, profiled_range })
    }
}

/// One scenario, several policies, same arrivals.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub policies: Vec<PolicySpec>,
    pub scaler: ScalerParams,
    pub horizontal: HorizontalParams,
    pub profiled_range: Option<ProfiledRange>,
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub spec: PolicySpec,
    pub name: String,
    pub result: SimResult,
}

impl Experiment {
    /// Runs every policy on its own thread; each run is single-threaded and
    /// sees the same arrival sequence because arrivals derive only from the
    /// scenario seed.
    pub fn run(&self) -> Result<Vec<PolicyRun>, ScenarioError> {
        let runs: Vec<Result<PolicyRun, ScenarioError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .policies
                .iter()
                .map(|spec| {
                    scope.spawn(move || {
                        let mut policy =
                            spec.build(&self.scenario.model, self.scenario.slo_ms, self.scaler, self.horizontal)?;
                        let result = sim::run(&self.scenario, &mut policy)?;
                        Ok(PolicyRun { spec: *spec, name: policy.name(), result })
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        });
        runs.into_iter().collect()
    }

    /// Count of served batches whose (batch, cores) lies outside the profiled range.
    pub fn extrapolated_dispatches(&self, result: &SimResult) -> usize {
        let Some(range) = self.profiled_range else { return 0 };
        result
            .outcomes
            .iter()
            .filter(|o| !range.contains(o.allocation_at_service.batch, o.allocation_at_service.cores))
            .count()
    }
}
