use proptest::prelude::*;

use vscale_core::perf_model::{self, LatencyModel, ProfilePoint};
use vscale_core::policy::{HorizontalParams, PolicySpec};
use vscale_core::queue::{EdfQueue, QueueSnapshot, Request};
use vscale_core::report;
use vscale_core::scaler::{self, Allocation, RateEstimate, ScalerError, ScalerParams};
use vscale_core::sim::{self, ArrivalMode, Scenario, SimResult};
use vscale_core::trace::{self, BandwidthSample, BandwidthTrace, Shape, SyntheticTrace};

fn model_strategy() -> impl Strategy<Value = LatencyModel> {
    (0.0..80.0f64, 0.0..80.0f64, 0.0..10.0f64, 0.0..40.0f64)
        .prop_filter_map("all-zero model", |(g, e, d, h)| LatencyModel::new(g, e, d, h).ok())
}

fn request_strategy() -> impl Strategy<Value = (f64, f64)> {
    // (arrival, comm) on a coarse grid so deadlines tie
    ((0u32..50).prop_map(|a| f64::from(a) * 10.0), (0u32..30).prop_map(|c| f64::from(c) * 10.0))
}

fn build_queue(reqs: &[(f64, f64)], slo: f64) -> EdfQueue {
    let mut q = EdfQueue::new();
    for (id, &(arrival, comm)) in reqs.iter().enumerate() {
        let r = Request { id: id as u64, arrival_time_ms: arrival, comm_latency_ms: comm, slo_ms: slo, size_kb: 100.0 };
        q.push(r, 1000.0).unwrap();
    }
    q
}

fn brute_force(
    model: &LatencyModel,
    snap: &QueueSnapshot,
    slo: f64,
    lambda: &RateEstimate,
    p: &ScalerParams,
) -> Option<Allocation> {
    if slo <= snap.cl_max_ms {
        return None;
    }
    let mut best: Option<Allocation> = None;
    for c in 1..=p.c_max {
        for b in 1..=p.b_max {
            let a = Allocation::new(c, b);
            if scaler::check_feasible(model, c, b, snap, slo, lambda, p)
                && best.is_none_or(|x| p.objective(a) < p.objective(x))
            {
                best = Some(a);
            }
        }
    }
    best
}

/// Straight from the pseudocode: walk the queue in steps of `b`.
fn pseudocode_feasible(l: f64, cl_max: f64, n: usize, b: usize, slo: f64) -> bool {
    let mut q_r = 0.0;
    let mut i = 1;
    while i <= n {
        if l + cl_max + q_r >= slo {
            return false;
        }
        q_r += l;
        i += b;
    }
    true
}

fn small_scenario(seed: u64, rate: f64, mode: ArrivalMode, model: LatencyModel, trace: BandwidthTrace) -> Scenario {
    Scenario {
        duration_s: 20.0,
        rate_rps: rate,
        arrival_mode: mode,
        request_size_kb: 200.0,
        slo_ms: 1000.0,
        trace,
        model,
        adaptation_period_ms: 1000.0,
        seed,
        resize_delay_ms: 0.0,
    }
}

fn run(scenario: &Scenario, spec: &str) -> SimResult {
    let spec: PolicySpec = spec.parse().unwrap();
    let mut policy = spec
        .build(&scenario.model, scenario.slo_ms, ScalerParams::default(), HorizontalParams::default())
        .unwrap();
    sim::run(scenario, &mut policy).unwrap()
}

fn table1() -> LatencyModel {
    perf_model::fit(&perf_model::table1_profile()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn queue_drains_in_deadline_order(reqs in prop::collection::vec(request_strategy(), 0..60), b in 1usize..10) {
        let mut q = build_queue(&reqs, 1000.0);
        let n = q.len();
        let mut seen = Vec::new();
        let mut last = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0u64);
        while !q.is_empty() {
            let batch = q.drain_batch(b, 1000.0);
            prop_assert!(!batch.is_empty() && batch.len() <= b);
            for r in batch {
                let key = (r.deadline_ms(), r.arrival_time_ms, r.id);
                prop_assert!(key > last, "{key:?} after {last:?}");
                last = key;
                seen.push(r.id);
            }
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n as u64).collect::<Vec<_>>());
    }

    #[test]
    fn snapshot_cl_max_is_queue_max(reqs in prop::collection::vec(request_strategy(), 0..40)) {
        let q = build_queue(&reqs, 1000.0);
        let snap = q.snapshot();
        let want = reqs.iter().map(|r| r.1).fold(0.0, f64::max);
        prop_assert_eq!(snap.cl_max_ms, want);
        prop_assert_eq!(snap.len(), reqs.len());
    }

    #[test]
    fn duplicate_ids_rejected(arrival in 0.0..100.0f64) {
        let mut q = EdfQueue::new();
        let r = Request { id: 7, arrival_time_ms: arrival, comm_latency_ms: 1.0, slo_ms: 10.0, size_kb: 1.0 };
        q.push(r, 100.0).unwrap();
        prop_assert!(q.push(r, 100.0).is_err());
        prop_assert_eq!(q.len(), 1);
    }

    #[test]
    fn model_monotone(m in model_strategy(), b in 1u32..32, c in 1u32..32) {
        prop_assert!(m.predict_latency(b, c + 1) <= m.predict_latency(b, c));
        prop_assert!(m.predict_latency(b + 1, c) >= m.predict_latency(b, c));
        let l = m.predict_latency(b, c);
        prop_assert!((m.throughput(b, c) * l - 1000.0 * f64::from(b)).abs() <= 1e-9 * 1000.0 * f64::from(b));
    }

    #[test]
    fn fit_recovers_its_own_predictions(m in model_strategy()) {
        let points: Vec<ProfilePoint> = [1u32, 2, 4, 8]
            .iter()
            .flat_map(|&c| [1u32, 2, 4, 8].map(|b| ProfilePoint::new(c, b, m.predict_latency(b, c))))
            .collect();
        let fitted = perf_model::fit(&points).unwrap();
        for p in &points {
            let pred = fitted.predict_latency(p.batch, p.cores);
            prop_assert!((pred - p.latency_ms).abs() <= 1e-6 * p.latency_ms.max(1.0));
        }
        // refitting the refit changes nothing
        let again: Vec<ProfilePoint> = points
            .iter()
            .map(|p| ProfilePoint::new(p.cores, p.batch, fitted.predict_latency(p.batch, p.cores)))
            .collect();
        let refit = perf_model::fit(&again).unwrap();
        for (x, y) in fitted.coefficients().iter().zip(refit.coefficients()) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn solve_matches_brute_force(
        m in model_strategy(),
        n in 0usize..64,
        cl in 0.0..900.0f64,
        slo in 50.0..2000.0f64,
        lambda in 0.0..200.0f64,
        rate_on in any::<bool>(),
        c_max in 1u32..=16,
        b_max in 1u32..=16,
    ) {
        let p = ScalerParams::new(c_max, b_max, 0.01, rate_on).unwrap();
        let snap = QueueSnapshot::uniform(n, cl, slo);
        let rate = RateEstimate::from_rps(lambda);
        let got = scaler::solve(&m, &snap, slo, &rate, &p).ok();
        prop_assert_eq!(got, brute_force(&m, &snap, slo, &rate, &p));
        if let Some(a) = got {
            prop_assert!(scaler::check_feasible(&m, a.cores, a.batch, &snap, slo, &rate, &p));
            prop_assert!(a.cores <= c_max && a.batch <= b_max);
        }
        // same inputs, same answer
        prop_assert_eq!(scaler::solve(&m, &snap, slo, &rate, &p).ok(), got);
    }

    #[test]
    fn feasibility_monotone_in_cores(
        m in model_strategy(),
        n in 0usize..64,
        cl in 0.0..900.0f64,
        slo in 50.0..2000.0f64,
        lambda in 0.0..200.0f64,
        b in 1u32..=16,
    ) {
        let p = ScalerParams::default();
        let snap = QueueSnapshot::uniform(n, cl, slo);
        let rate = RateEstimate::from_rps(lambda);
        let mut was = false;
        for c in 1..=16 {
            let now = scaler::check_feasible(&m, c, b, &snap, slo, &rate, &p);
            prop_assert!(!was || now, "feasible at fewer cores but not at {c}");
            was = now;
        }
    }

    #[test]
    fn slo_at_or_below_cl_max_is_infeasible(m in model_strategy(), n in 0usize..20, cl in 1.0..1000.0f64, frac in 0.0..=1.0f64) {
        let slo = cl * frac;
        let snap = QueueSnapshot::uniform(n.max(1), cl, 1000.0);
        let r = scaler::solve(&m, &snap, slo, &RateEstimate::from_rps(0.0), &ScalerParams::default());
        prop_assert!(matches!(r, Err(ScalerError::Infeasible)));
    }

    #[test]
    fn trace_lookup_is_step_hold(bws in prop::collection::vec(0.1..50.0f64, 1..20), t in 0.0..40.0f64) {
        let samples: Vec<BandwidthSample> = bws
            .iter()
            .enumerate()
            .map(|(i, &bw)| BandwidthSample { t_s: 2.0 * i as f64, bandwidth_mbps: bw })
            .collect();
        let tr = BandwidthTrace::new(samples).unwrap();
        let idx = ((t / 2.0).floor() as usize).min(bws.len() - 1);
        prop_assert_eq!(tr.bandwidth_at(t), bws[idx]);
        let back = trace::parse_trace(&tr.to_csv()).unwrap();
        prop_assert_eq!(back, tr);
    }

    #[test]
    fn comm_latency_homogeneous(size in 1.0..1000.0f64, bw in 0.1..100.0f64, k in 0.5..4.0f64) {
        let base = trace::comm_latency(size, bw);
        prop_assert!((trace::comm_latency(k * size, bw) - k * base).abs() <= 1e-9 * k * base);
        prop_assert!((trace::comm_latency(size, k * bw) - base / k).abs() <= 1e-9 * base);
    }

    #[test]
    fn synthetic_trace_stays_in_range(low in 0.1..5.0f64, span in 0.0..10.0f64, period in 2.0..100.0f64, shape in 0usize..3) {
        let shape = [Shape::Square, Shape::Sinusoid, Shape::Step][shape];
        let tr = SyntheticTrace { shape, low, high: low + span, period_s: period, duration_s: None }.generate(120.0).unwrap();
        prop_assert!(tr.min_bandwidth() >= low - 1e-12);
        prop_assert!(tr.max_bandwidth() <= low + span + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn check_feasible_matches_pseudocode(
        m in model_strategy(),
        n in 0usize..64,
        cl in 0.0..900.0f64,
        slo in 50.0..2000.0f64,
        c in 1u32..=16,
        b in 1u32..=16,
    ) {
        let p = ScalerParams { enforce_rate_constraint: false, ..ScalerParams::default() };
        let snap = QueueSnapshot::uniform(n, cl, slo);
        let got = scaler::check_feasible(&m, c, b, &snap, slo, &RateEstimate::from_rps(0.0), &p);
        prop_assert_eq!(got, pseudocode_feasible(m.predict_latency(b, c), cl, n, b as usize, slo));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_invariants(
        seed in any::<u64>(),
        rate in 1.0..60.0f64,
        poisson in any::<bool>(),
        low in 0.3..3.0f64,
        policy in prop::sample::select(vec!["sponge", "static:4", "static:16", "horizontal"]),
    ) {
        let mode = if poisson { ArrivalMode::Poisson } else { ArrivalMode::Fixed };
        let tr = SyntheticTrace { shape: Shape::Square, low, high: 7.0, period_s: 10.0, duration_s: None }
            .generate(20.0)
            .unwrap();
        let s = small_scenario(seed, rate, mode, table1(), tr);
        let r = run(&s, policy);
        let arrivals = sim::generate_arrivals(s.rate_rps, s.duration_s, s.arrival_mode, s.seed);

        // conservation: every arrival finishes exactly once
        prop_assert_eq!(r.outcomes.len(), arrivals.len());
        for (i, o) in r.outcomes.iter().enumerate() {
            prop_assert_eq!(o.id, i as u64);
            // the clock ticks in whole microseconds
            prop_assert!((o.send_time_ms - arrivals[i]).abs() <= 5e-4 + 1e-9);
            prop_assert!(o.comm_latency_ms >= 0.0 && o.queue_latency_ms >= -1e-3 && o.processing_latency_ms > 0.0);
            let sum = o.comm_latency_ms + o.queue_latency_ms + o.processing_latency_ms;
            prop_assert!((o.e2e_latency_ms - sum).abs() <= 1e-6);
            prop_assert_eq!(o.violated, o.e2e_latency_ms > s.slo_ms);
            prop_assert!(o.send_time_ms + o.e2e_latency_ms <= r.end_ms + 1e-3);
        }
        prop_assert!(r.max_queue_len <= arrivals.len());
        let summary = sim::summarize(&r, s.slo_ms);
        let window_violations: u64 = r.windows.iter().map(|w| w.violations).sum();
        prop_assert_eq!(window_violations, summary.violation_count);

        // CSV output parses back to the same text
        let req = report::requests_csv(&r.outcomes);
        prop_assert_eq!(report::requests_csv(&report::parse_requests_csv(&req).unwrap()), req);
        let win = report::windows_csv(&r.windows);
        prop_assert_eq!(report::windows_csv(&report::parse_windows_csv(&win).unwrap()), win);
    }

    #[test]
    fn single_server_batches_do_not_overlap(seed in any::<u64>(), rate in 5.0..120.0f64, policy in prop::sample::select(vec!["sponge", "static:2", "static:8"])) {
        let s = small_scenario(seed, rate, ArrivalMode::Poisson, table1(), BandwidthTrace::constant(2.0).unwrap());
        let r = run(&s, policy);
        let mut spans: Vec<(f64, f64)> = r
            .outcomes
            .iter()
            .map(|o| {
                let start = o.send_time_ms + o.comm_latency_ms + o.queue_latency_ms;
                (start, start + o.processing_latency_ms)
            })
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        spans.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-6);
        for w in spans.windows(2) {
            prop_assert!(w[1].0 >= w[0].1 - 2e-3, "batch at {} overlaps one ending {}", w[1].0, w[0].1);
        }
    }

    #[test]
    fn sponge_never_costs_more_than_static_max(seed in any::<u64>(), rate in 1.0..80.0f64, low in 0.3..7.0f64) {
        let tr = SyntheticTrace { shape: Shape::Square, low, high: 7.0, period_s: 10.0, duration_s: None }
            .generate(20.0)
            .unwrap();
        let s = small_scenario(seed, rate, ArrivalMode::Poisson, table1(), tr);
        let sponge = run(&s, "sponge");
        let fixed = run(&s, "static:16");
        prop_assert!(sponge.total_core_ms <= fixed.total_core_ms + 1e-6);
    }
}

#[test]
fn same_seed_same_result() {
    let tr = BandwidthTrace::constant(1.0).unwrap();
    let s = small_scenario(9, 30.0, ArrivalMode::Poisson, table1(), tr);
    let a = run(&s, "sponge");
    let b = run(&s, "sponge");
    assert_eq!(report::requests_csv(&a.outcomes), report::requests_csv(&b.outcomes));
    assert_eq!(report::windows_csv(&a.windows), report::windows_csv(&b.windows));
}

#[test]
fn poisson_count_within_three_sigma() {
    for seed in 0..5 {
        let n = sim::generate_arrivals(20.0, 600.0, ArrivalMode::Poisson, seed).len() as f64;
        let sigma = 12000f64.sqrt();
        assert!((n - 12000.0).abs() <= 3.0 * sigma, "seed {seed}: {n} arrivals");
    }
    assert_eq!(sim::generate_arrivals(20.0, 600.0, ArrivalMode::Fixed, 0).len(), 12000);
}
