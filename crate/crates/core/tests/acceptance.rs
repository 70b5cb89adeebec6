//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use asymlift_core::backtest::{ablation_grid, run_backtest, AblationCell, BacktestConfig};
use asymlift_core::feedback::{
    cost_generated, decompose_error, FeedbackConfig, FeedbackState, OutcomeInputs, RealizedCpp,
};
use asymlift_core::preprocess::{clean_record, d1_utilization, noise_factors};
use asymlift_core::synth::{generate, ScenarioSpec};
use asymlift_core::{CorrectionTerms, CostProfile, Optimizer, QuadConfig, SolverConfig, StationWeekRecord, Week};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{ContinuousCDF, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn probit(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

fn profile(cpp_h: f64, cpp_l: f64, sigma: f64) -> CostProfile {
    CostProfile::new("S", cpp_h, cpp_l, sigma)
}

fn week(w: u32) -> Week {
    Week::from_iso(2024, 1).unwrap().offset(w as i32)
}

fn fractile_oracle() -> Outcome {
    let start = Instant::now();
    let opt = Optimizer::default();
    let ratios = [1.0 / 50.0, 1.0 / 7.0, 1.0, 7.0, 50.0];
    let sigmas = [1.0, 10.0, 100.0, 1_000.0, 10_000.0];
    let mut worst: f64 = 0.0;
    for &r in &ratios {
        for &sigma in &sigmas {
            let d = opt.optimal_delta(week(0), &profile(r, 1.0, sigma), &CorrectionTerms::default()).unwrap();
            let oracle = sigma * probit(r / (1.0 + r));
            worst = worst.max((d.delta_star - oracle).abs() / sigma);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(5),
        format!("25 combinations, max |Δ* - oracle|/σ = {worst:.2e} (tol 1e-4), {elapsed:.2?} (limit 5 s)"),
    )
}

fn worked_ratio() -> Outcome {
    let d = Optimizer::default().optimal_delta(week(0), &profile(1.0, 2.0, 40.0), &CorrectionTerms::default()).unwrap();
    let err = (d.p_l_star - 1.0 / 3.0).abs();
    outcome(err <= 1e-9, format!("CPP_L = 2·CPP_H gives P(L)* = {:.12} (|err| {err:.1e}, tol 1e-9)", d.p_l_star))
}

fn symmetric_identity() -> Outcome {
    let opt = Optimizer::default();
    let mut worst: f64 = 0.0;
    for &(c, sigma) in &[(1.0, 1.0), (3.5, 80.0), (0.2, 2_500.0), (12.0, 0.01)] {
        let d = opt.optimal_delta(week(0), &profile(c, c, sigma), &CorrectionTerms::default()).unwrap();
        worst = worst.max(d.delta_star.abs() / sigma);
    }
    outcome(worst <= 1e-6, format!("max |Δ*|/σ = {worst:.2e} (tol 1e-6)"))
}

fn truncation() -> Outcome {
    let narrow = Optimizer::default();
    let wide = Optimizer::new(SolverConfig { quad: QuadConfig { width: 20.0, ..QuadConfig::default() }, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let sigma = 10f64.powf(rng.gen_range(-1.0..4.0));
        let p = profile(rng.gen_range(0.1..20.0), rng.gen_range(0.1..20.0), sigma);
        let corr = CorrectionTerms { calib_mean: rng.gen_range(-2.0..2.0) * sigma, ..Default::default() };
        let delta = rng.gen_range(-3.0..3.0) * sigma;
        let a = narrow.expected_cost(delta, &p, &corr).unwrap();
        let b = wide.expected_cost(delta, &p, &corr).unwrap();
        worst = worst.max((a - b).abs() / b.abs());
    }
    outcome(worst <= 1e-9, format!("10 random profiles, max relative gap W=10 vs W=20 = {worst:.2e} (tol 1e-9)"))
}

fn noise_recovery() -> Outcome {
    let spec = ScenarioSpec { n_stations: 20, n_weeks: 104, d1_skill: 0.5, d1_noise: 0.06, seed: 5, ..Default::default() };
    let data = generate(&spec).unwrap();
    let (mut identity_ok, mut worst, mut injected) = (true, 0.0f64, 0usize);
    for (r, t) in data.records.iter().zip(&data.truth) {
        let c = clean_record(r, true, spec.d1_cap);
        identity_ok &= c.cost_h_clean == (c.cost_h_raw - c.noise_h).max(0.0);
        identity_ok &= c.cost_l_clean == (c.cost_l_raw - c.noise_l).max(0.0);
        let m = r.error_metrics();
        let u = d1_utilization(m.err_pct, m.d1_delta_pct);
        let (fh, fl) = noise_factors(m.err_pct, m.d1_delta_pct, u, spec.d1_cap);
        injected += usize::from(fh != 0.0 || fl != 0.0);
        // Capped factors never exceed the cap, so the residual is pure rounding.
        let bound = 1e-12 * (r.cost_h_raw + r.cost_l_raw).max(1.0);
        worst = worst.max(((c.cost_h_clean - t.cost_h_clean).abs() + (c.cost_l_clean - t.cost_l_clean).abs()) / bound);
    }
    outcome(
        identity_ok && worst <= 1.0 && injected > 0,
        format!(
            "{} records, {injected} with D-1 noise; C = C_raw - N bit-exact: {identity_ok}; max recovery error {:.2} of rounding bound",
            data.records.len(),
            worst
        ),
    )
}

fn ledger_checks() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(delta, l, h) in &[(100.0, 1.0, 5.0), (250.0, 3.0, 0.5), (7.5, 2.0, 2.0), (1e4, 0.1, 9.0)] {
        let scale = delta * (l + h);
        worst = worst.max(cost_generated(delta, l / (l + h), l, h).abs() / scale);
        // Downward adjustments break even at the mirrored share.
        worst = worst.max(cost_generated(-delta, h / (l + h), l, h).abs() / scale);
    }
    let hand = cost_generated(100.0, 0.5, 1.0, 5.0);
    outcome(
        worst <= 1e-12 && hand == -200.0,
        format!("break-even max |C|/(|Δ|·(CPP_L+CPP_H)) = {worst:.1e} (tol 1e-12); hand fixture C = {hand} (expected -200)"),
    )
}

/// Station with constant bias `b`, exact cost rates and known σ.
fn biased_week(rng: &mut ChaCha8Rng, noise: &NormalDist<f64>, t: u32, bias: f64) -> StationWeekRecord {
    let f = 1_000.0;
    let o = f + bias + noise.sample(rng);
    let e = o - f;
    StationWeekRecord {
        station_id: "S".into(),
        week: week(t),
        observed_demand: o,
        wk1_forecast: f,
        d1_forecast: f,
        cost_h_raw: if e > 0.0 { 5.0 * e } else { 0.0 },
        cost_l_raw: if e < 0.0 { -e } else { 0.0 },
    }
}

fn self_regulation() -> Outcome {
    let start = Instant::now();
    let (bias, sigma, weeks, converge_by) = (50.0, 10.0, 60u32, 30u32);
    let p = profile(5.0, 1.0, sigma);
    let opt = Optimizer::default();
    let config = FeedbackConfig::default();
    let noise = NormalDist::new(0.0, sigma).unwrap();

    // Same demand path for both runs.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let path: Vec<_> = (0..weeks).map(|t| biased_week(&mut rng, &noise, t, bias)).collect();

    let mut with_feedback = FeedbackState::new("S");
    let mut calib_at_converge = f64::NAN;
    let mut post = Vec::new();
    for (t, r) in path.iter().enumerate() {
        let d = opt.optimal_delta(r.week, &p, &with_feedback.corrections()).unwrap();
        let c = clean_record(r, true, 0.05);
        let realized = RealizedCpp::from_week(&c, 1.0, 5.0);
        let (o, _) = with_feedback.apply_week(&opt, &config, &d, Some(&p), &c, realized).unwrap();
        if t as u32 + 1 == converge_by {
            calib_at_converge = with_feedback.calib_mean;
        }
        if t as u32 >= converge_by {
            post.push(o.eps_calibration.abs());
        }
    }

    // Pre-feedback: decisions ignore the state, which only tracks what was observed.
    let mut tracker = FeedbackState::new("S");
    let mut pre = Vec::new();
    for (t, r) in path.iter().enumerate() {
        let zero = CorrectionTerms::default();
        let d = opt.optimal_delta(r.week, &p, &zero).unwrap();
        let c = clean_record(r, true, 0.05);
        let inputs = OutcomeInputs {
            observed_demand: c.observed_demand,
            wk1_forecast: c.wk1_forecast,
            realized: RealizedCpp::from_week(&c, 1.0, 5.0),
            decision: &d,
            profile: Some(&p),
            assumed: zero,
            observed_calib_mean: tracker.calib_mean_with(r.week, c.metrics.err_pkg, &config),
        };
        let o = decompose_error(&opt, &inputs).unwrap();
        tracker.update(o.clone(), &config).unwrap();
        if t as u32 >= converge_by {
            pre.push(o.eps_calibration.abs());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (post_mean, pre_mean) = (mean(&post), mean(&pre));
    let elapsed = start.elapsed();
    let converged = (calib_at_converge - bias).abs() <= 5.0;
    let damped = post_mean <= 0.1 * pre_mean;
    outcome(
        converged && damped && elapsed < Duration::from_secs(10),
        format!(
            "calib_mean after {converge_by} weeks = {calib_at_converge:.2} (|·-50| ≤ 5); mean |ε_cal| {post_mean:.3} vs pre-feedback {pre_mean:.3} (ratio {:.3}, ≤ 0.1); {elapsed:.2?} (limit 10 s)",
            post_mean / pre_mean
        ),
    )
}

fn ordered(costs: &[f64; 4]) -> bool {
    let [both, tw, nr, neither] = *costs;
    both <= tw && both <= nr && tw <= neither && nr <= neither
}

fn grid_costs(seed: u64) -> [f64; 4] {
    let data = generate(&ScenarioSpec::drift_benchmark(seed)).unwrap();
    let reports = ablation_grid(&data.records, &BacktestConfig::default()).unwrap();
    assert_eq!(reports.iter().map(|r| r.cell).collect::<Vec<_>>(), AblationCell::GRID);
    [0, 1, 2, 3].map(|i| reports[i].total_cost_generated)
}

fn directional_table() -> Outcome {
    let costs = grid_costs(0);
    let holds = (1..10).filter(|&s| ordered(&grid_costs(s))).count() + usize::from(ordered(&costs));
    outcome(
        ordered(&costs),
        format!(
            "seed 0: TW+NR {:.0}, TW {:.0}, NR {:.0}, neither {:.0}; ordering holds on {holds}/10 seeds",
            costs[0], costs[1], costs[2], costs[3]
        ),
    )
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let mut negative = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..100 {
        let spec = ScenarioSpec {
            n_stations: 50,
            n_weeks: 104,
            cpp_h_true: 5.0,
            cpp_l_true: 1.0,
            calib_bias: 0.0,
            seed,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        let total = run_backtest(&data.records, &BacktestConfig::default()).unwrap().total_cost_generated;
        negative += usize::from(total < 0.0);
        worst = worst.max(total);
    }
    let elapsed = start.elapsed();
    outcome(
        negative >= 95 && elapsed < Duration::from_secs(60),
        format!("{negative}/100 runs with total cost < 0 (need ≥ 95), worst {worst:.0}; {elapsed:.2?} (limit 60 s)"),
    )
}

fn no_lookahead() -> Outcome {
    let spec = ScenarioSpec { n_stations: 1, n_weeks: 20, sigma_true: 200.0, seed: 11, ..Default::default() };
    let base = generate(&spec).unwrap().records;
    let config = BacktestConfig { min_obs: 2, ..Default::default() };
    let decisions = |records: &[StationWeekRecord]| -> Vec<String> {
        let report = run_backtest(records, &config).unwrap();
        report.per_station[0].weeks.iter().map(|w| serde_json::to_string(&w.decision).unwrap()).collect()
    };
    let reference = decisions(&base);
    let optimized = reference.iter().filter(|d| d.contains("\"optimized\"")).count();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let first = config.min_train_weeks;
    let mut identical = true;
    for t in first..base.len() - 1 {
        for _ in 0..3 {
            // Permute the payloads of weeks after t, keeping the week keys.
            let mut shuffled = base.clone();
            let mut tail: Vec<_> = base[t + 1..].to_vec();
            tail.shuffle(&mut rng);
            for (slot, src) in shuffled[t + 1..].iter_mut().zip(tail) {
                *slot = StationWeekRecord { week: slot.week, ..src };
            }
            let got = decisions(&shuffled);
            identical &= got[..=t - first] == reference[..=t - first];
        }
    }
    outcome(
        identical && optimized > 0,
        format!("{} decision weeks ({optimized} optimized), 3 shuffles per cut: byte-identical = {identical}", reference.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("fractile oracle", fractile_oracle),
        ("worked cost ratio", worked_ratio),
        ("symmetric-cost identity", symmetric_identity),
        ("integration truncation", truncation),
        ("noise-reduction recovery", noise_recovery),
        ("ledger checks", ledger_checks),
        ("self-regulation convergence", self_regulation),
        ("directional ablation ordering", directional_table),
        ("Monte Carlo savings positivity", monte_carlo),
        ("no lookahead", no_lookahead),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {:>2} {:<32} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
