use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vscale_core::perf_model::{self, ModelError, ModelFile, ProfiledRange};
use vscale_core::queue::QueueSnapshot;
use vscale_core::report;
use vscale_core::scaler::{self, RateEstimate, ScalerError, ScalerParams};
use vscale_core::scenario::{ScenarioError, ScenarioFile};
use vscale_core::sim::{self, ArrivalMode};

#[derive(Parser)]
#[command(name = "vscale", version, about = "SLO-aware in-place vertical scaling: fit, solve, simulate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the latency model to a `cores,batch,latency_ms` profile CSV.
    Fit {
        profile: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Pick (cores, batch) for one queue state.
    Solve(SolveArgs),
    /// Run policies over a scenario and write per-request/per-window CSVs.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Model file; defaults to the built-in Table 1 fit.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    slo_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    cl_max_ms: f64,
    #[arg(long, default_value_t = 0)]
    queue_len: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda_rps: f64,
    #[arg(long, default_value_t = scaler::DEFAULT_C_MAX)]
    c_max: u32,
    #[arg(long, default_value_t = scaler::DEFAULT_B_MAX)]
    b_max: u32,
    #[arg(long, default_value_t = scaler::DEFAULT_DELTA_PENALTY)]
    delta_penalty: f64,
    /// Drop the throughput >= lambda constraint.
    #[arg(long)]
    no_rate_constraint: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; flags below override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// e.g. `shape=square,low=0.5,high=7,period=60`
    #[arg(long)]
    synthetic_trace: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    arrival: Option<ArrivalMode>,
    #[arg(long)]
    slo_ms: Option<f64>,
    #[arg(long)]
    size_kb: Option<f64>,
    #[arg(long)]
    adaptation_ms: Option<f64>,
    /// sponge | static:<cores>[:<batch>] | horizontal (repeatable)
    #[arg(long = "policy")]
    policies: Vec<String>,
    #[arg(long)]
    c_max: Option<u32>,
    #[arg(long)]
    b_max: Option<u32>,
    #[arg(long)]
    delta_penalty: Option<f64>,
    #[arg(long)]
    no_rate_constraint: bool,
    #[arg(long)]
    cold_start_ms: Option<f64>,
    #[arg(long)]
    resize_delay_ms: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Exit 1 for infeasible or invalid input, 2 for I/O and parse failures.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }

    fn io(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Parse { .. } | ModelError::Io(_) => Failure::io(e.to_string()),
            other => Failure::invalid(other.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_io_or_parse() {
            Failure::io(e.to_string())
        } else {
            Failure::invalid(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit { profile, out } => cmd_fit(&profile, &out),
        Command::Solve(args) => cmd_solve(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(format!("writing {}: {e}", path.display())))
}

fn cmd_fit(profile: &Path, out: &Path) -> Result<(), Failure> {
    let file = fs::File::open(profile).map_err(|e| Failure::io(format!("{}: {e}", profile.display())))?;
    let points = perf_model::parse_profile_csv(file)?;
    let model = perf_model::fit(&points)?;
    println!("{model}");
    println!("{:>5} {:>5} {:>10} {:>10} {:>8}", "cores", "batch", "observed", "predicted", "error%");
    for p in &points {
        let pred = model.predict_latency(p.batch, p.cores);
        println!(
            "{:>5} {:>5} {:>10.2} {:>10.2} {:>8.2}",
            p.cores,
            p.batch,
            p.latency_ms,
            pred,
            100.0 * (pred - p.latency_ms) / p.latency_ms
        );
    }
    println!("MAPE: {:.2}%", 100.0 * model.mape(&points));
    write_file(out, &ModelFile::new(&model, ProfiledRange::of(&points)).to_toml())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let (model, range) = match &args.model {
        Some(path) => {
            let doc = ModelFile::load(path)?;
            (doc.model()?, doc.range())
        }
        None => {
            let points = perf_model::table1_profile();
            (perf_model::fit(&points)?, ProfiledRange::of(&points))
        }
    };
    let params = ScalerParams::new(args.c_max, args.b_max, args.delta_penalty, !args.no_rate_constraint)
        .map_err(|e| Failure::invalid(e.to_string()))?;
    let snap = QueueSnapshot::uniform(args.queue_len, args.cl_max_ms, args.slo_ms);
    let lambda = RateEstimate::from_rps(args.lambda_rps);
    match scaler::solve(&model, &snap, args.slo_ms, &lambda, &params) {
        Ok(alloc) => {
            println!("{alloc}");
            println!("latency_ms={:.3}", model.predict_latency(alloc.batch, alloc.cores));
            println!("throughput_rps={:.3}", model.throughput(alloc.batch, alloc.cores));
            println!("objective={:.4}", params.objective(alloc));
            if range.is_some_and(|r| !r.contains(alloc.batch, alloc.cores)) {
                println!("warnings=1 (allocation outside the profiled range)");
            }
            Ok(())
        }
        Err(ScalerError::Infeasible) => {
            println!("infeasible");
            Err(Failure::invalid("infeasible: no allocation meets the SLO"))
        }
        Err(e) => Err(Failure::invalid(e.to_string())),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let cwd = PathBuf::from(".");
    let (file, base) = match &args.scenario {
        Some(p) => ScenarioFile::load(p)?,
        None => (ScenarioFile::default(), cwd.clone()),
    };
    // Flag paths are relative to the working directory, not the scenario file.
    let abs = |p: &Option<PathBuf>| {
        p.as_ref().map(|p| if p.is_absolute() { p.clone() } else { std::env::current_dir().unwrap_or_default().join(p) })
    };
    let flags = ScenarioFile {
        duration_s: args.duration_s,
        rate_rps: args.rate,
        arrival_mode: args.arrival,
        request_size_kb: args.size_kb,
        slo_ms: args.slo_ms,
        adaptation_period_ms: args.adaptation_ms,
        seed: args.seed,
        trace: abs(&args.trace),
        synthetic_trace: args.synthetic_trace.clone(),
        model: abs(&args.model),
        policies: (!args.policies.is_empty()).then(|| args.policies.clone()),
        c_max: args.c_max,
        b_max: args.b_max,
        delta_penalty: args.delta_penalty,
        enforce_rate_constraint: args.no_rate_constraint.then_some(false),
        cold_start_ms: args.cold_start_ms,
        resize_delay_ms: args.resize_delay_ms,
        ..ScenarioFile::default()
    };
    let mut merged = file.merge(flags);
    if args.trace.is_some() {
        merged.synthetic_trace = None;
    } else if args.synthetic_trace.is_some() {
        merged.trace = None;
    }
    let experiment = merged.resolve(&base)?;
    let runs = experiment.run()?;

    fs::create_dir_all(&args.out).map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    let slo = experiment.scenario.slo_ms;
    let mut summaries = Vec::new();
    println!(
        "{:<12} {:>8} {:>10} {:>9} {:>9} {:>10} {:>14} {:>9}",
        "policy", "requests", "violations", "viol%", "p99_ms", "mean_cores", "core_ms", "max_queue"
    );
    for run in &runs {
        write_file(&args.out.join(format!("{}_requests.csv", run.name)), &report::requests_csv(&run.result.outcomes))?;
        write_file(&args.out.join(format!("{}_windows.csv", run.name)), &report::windows_csv(&run.result.windows))?;
        let s = sim::summarize(&run.result, slo);
        let extrapolated = experiment.extrapolated_dispatches(&run.result);
        println!(
            "{:<12} {:>8} {:>10} {:>9.3} {:>9.1} {:>10.2} {:>14.0} {:>9}",
            run.name,
            s.requests,
            s.violation_count,
            100.0 * s.violation_rate,
            s.p99_e2e_ms,
            s.mean_cores,
            s.total_core_ms,
            s.max_queue_len
        );
        if extrapolated > 0 {
            println!("  warning: {extrapolated} requests served outside the profiled (batch, cores) range");
        }
        summaries.push(json!({
            "policy": run.name,
            "summary": s,
            "end_ms": run.result.end_ms,
            "extrapolated_requests": extrapolated,
        }));
    }
    let doc = json!({
        "seed": experiment.scenario.seed,
        "slo_ms": slo,
        "rate_rps": experiment.scenario.rate_rps,
        "duration_s": experiment.scenario.duration_s,
        "model": experiment.scenario.model,
        "policies": summaries,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::io(e.to_string()))?;
    write_file(&args.out.join("summary.json"), &(text + "\n"))?;
    println!("wrote results to {}", args.out.display());
    Ok(())
}
