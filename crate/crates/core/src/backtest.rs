//! Walk-forward replay of the full pipeline over historical station-weeks.
//!
//! For every station and every week `t` after a training prefix, the
//! profile is estimated from weeks strictly before `t`, the adjustment is
//! decided with the feedback state accumulated so far, scored against week
//! `t`, and only then folded back into the state. Nothing from weeks after
//! `t` reaches the decision for `t`.
//!
//! Scoring always uses noise-reduced costs so that ablation cells are
//! compared on the same ruler; the cell's flags only change what the model
//! sees. A week only reveals the rate of the scenario that happened, so the
//! other rate is taken from realized weeks around `t`; this is ex-post
//! scoring and never feeds a decision.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{estimate_profile, CostProfile, Scenario, DEFAULT_MIN_OBS};
use crate::feedback::{cost_generated, utilization, FeedbackConfig, FeedbackState, RealizedCpp, DEFAULT_FEEDBACK_WINDOW};
use crate::ingest::{group_by_station, StationWeekRecord};
use crate::optimizer::{AdjustmentDecision, CorrectionTerms, DecisionReason, Optimizer, OptimizerError, SolverConfig};
use crate::preprocess::{clean_record, weight_series, CleanedRecord, PreprocessConfig, PreprocessError};
use crate::week::Week;

pub const DEFAULT_MIN_TRAIN_WEEKS: usize = 8;
pub const DEFAULT_SCORING_HALF_WINDOW: usize = 13;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One cell of the time-weighting × noise-reduction ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationCell {
    pub time_weighting: bool,
    pub noise_reduction: bool,
}

impl AblationCell {
    /// Both on, weighting only, noise reduction only, neither.
    pub const GRID: [Self; 4] = [
        Self { time_weighting: true, noise_reduction: true },
        Self { time_weighting: true, noise_reduction: false },
        Self { time_weighting: false, noise_reduction: true },
        Self { time_weighting: false, noise_reduction: false },
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Model,
    /// `Δ = o - f`: captures every avoidable cost by construction.
    PerfectForesight,
    NoAdjustment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// The cell is taken from `time_weighting` and `noise_reduction`.
    pub preprocess: PreprocessConfig,
    pub min_obs: usize,
    pub solver: SolverConfig,
    pub feedback_window: usize,
    /// When false, every decision uses zero corrections.
    pub feedback: bool,
    pub min_train_weeks: usize,
    /// Scoring prices the scenario that did not happen at the realized rate
    /// over weeks `t ± scoring_half_window`. Scoring only; decisions never
    /// see these weeks.
    pub scoring_half_window: usize,
    pub policy: Policy,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            min_obs: DEFAULT_MIN_OBS,
            solver: SolverConfig::default(),
            feedback_window: DEFAULT_FEEDBACK_WINDOW,
            feedback: true,
            min_train_weeks: DEFAULT_MIN_TRAIN_WEEKS,
            scoring_half_window: DEFAULT_SCORING_HALF_WINDOW,
            policy: Policy::Model,
        }
    }
}

impl BacktestConfig {
    pub fn cell(&self) -> AblationCell {
        AblationCell { time_weighting: self.preprocess.time_weighting, noise_reduction: self.preprocess.noise_reduction }
    }

    pub fn with_cell(mut self, cell: AblationCell) -> Self {
        self.preprocess.time_weighting = cell.time_weighting;
        self.preprocess.noise_reduction = cell.noise_reduction;
        self
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        self.preprocess.validate()?;
        let bad = |m: &str| Err(BacktestError::InvalidConfig(m.to_string()));
        if self.min_obs == 0 {
            return bad("min_obs must be >= 1");
        }
        if self.min_train_weeks < 2 {
            return bad("min_train_weeks must be >= 2");
        }
        if self.feedback_window == 0 {
            return bad("feedback_window must be >= 1");
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) || !self.solver.quad.is_valid() {
            return bad("solver tolerance and quadrature settings must be positive");
        }
        Ok(())
    }

    fn feedback_config(&self) -> FeedbackConfig {
        FeedbackConfig { window: self.feedback_window, k: self.preprocess.k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekScore {
    pub decision: AdjustmentDecision,
    /// `None` when no adjustment was made.
    pub utilization: Option<f64>,
    pub cost_generated: f64,
    /// Regret cost of the unadjusted forecast this week.
    pub realized_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationBreakdown {
    pub station_id: String,
    pub weeks_evaluated: usize,
    pub weeks_adjusted: usize,
    pub cost_generated: f64,
    pub max_achievable_savings: f64,
    pub avg_utilization: Option<f64>,
    /// Weeks whose cleaned cost was clamped at zero in the model's view.
    pub clamp_events: usize,
    /// Weeks whose outcome could not be folded into the feedback state.
    pub feedback_errors: usize,
    /// Mean absolute percentage error of the predicted rate for the scenario
    /// that occurred, over weeks with a profile and a nonzero realized rate.
    pub cpp_mape: Option<f64>,
    pub cpp_mape_weeks: usize,
    pub weeks: Vec<WeekScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedStation {
    pub station_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub cell: AblationCell,
    pub policy: Policy,
    /// Sum of weekly generated costs; negative means savings.
    pub total_cost_generated: f64,
    /// Mean utilization over adjusted station-weeks.
    pub avg_utilization: Option<f64>,
    pub max_achievable_savings: f64,
    /// `-total_cost_generated / max_achievable_savings`.
    pub capture_ratio: Option<f64>,
    /// Week-weighted over stations.
    pub cpp_mape: Option<f64>,
    pub per_station: Vec<StationBreakdown>,
    pub excluded: Vec<ExcludedStation>,
}

/// Prefix sums of scenario-matched costs and error packages, for realized
/// rates over arbitrary week ranges.
struct RateSums {
    /// `[cost_h, pkg_h, cost_l, pkg_l]` over the first `i` weeks.
    prefix: Vec<[f64; 4]>,
}

impl RateSums {
    fn new(records: &[CleanedRecord]) -> Self {
        let mut prefix = Vec::with_capacity(records.len() + 1);
        let mut acc = [0.0; 4];
        prefix.push(acc);
        for r in records {
            let e = r.metrics.err_pkg;
            match Scenario::of(e) {
                Some(Scenario::H) => {
                    acc[0] += r.cost_h_clean;
                    acc[1] += e;
                }
                Some(Scenario::L) => {
                    acc[2] += r.cost_l_clean;
                    acc[3] -= e;
                }
                None => {}
            }
            prefix.push(acc);
        }
        Self { prefix }
    }

    /// `(cpp_l, cpp_h)` over weeks `lo..hi`; `None` where nothing was seen.
    fn rates(&self, lo: usize, hi: usize) -> (Option<f64>, Option<f64>) {
        let (a, b) = (self.prefix[lo], self.prefix[hi]);
        let ratio = |c: usize, p: usize| {
            let pkg = b[p] - a[p];
            (pkg > 0.0).then(|| (b[c] - a[c]) / pkg)
        };
        (ratio(2, 3), ratio(0, 1))
    }

    /// Rates centred on week `t`, widening to the whole series and then to
    /// `fallback` where a scenario never occurs.
    fn around(&self, t: usize, half_window: usize, fallback: (f64, f64)) -> (f64, f64) {
        let n = self.prefix.len() - 1;
        let (l, h) = self.rates(t.saturating_sub(half_window), (t + half_window + 1).min(n));
        let (all_l, all_h) = self.rates(0, n);
        (l.or(all_l).unwrap_or(fallback.0), h.or(all_h).unwrap_or(fallback.1))
    }
}

/// Regret the unadjusted forecast incurred over the evaluated weeks, with
/// noise-reduced costs. Upper bound on what any adjustment can save.
pub fn max_achievable_savings(records: &[StationWeekRecord], config: &BacktestConfig) -> f64 {
    group_by_station(records)
        .values()
        .filter(|series| series.len() > config.min_train_weeks)
        .map(|series| {
            series[config.min_train_weeks..]
                .iter()
                .map(|r| clean_record(r, true, config.preprocess.d1_cap).realized_regret())
                .sum::<f64>()
        })
        .sum()
}

pub fn run_backtest(records: &[StationWeekRecord], config: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    config.validate()?;
    let optimizer = Optimizer::new(config.solver);
    let stations = group_by_station(records);
    let results: Vec<_> = stations
        .into_par_iter()
        .map(|(id, series)| replay_station(&optimizer, config, &id, &series).map_err(|reason| (id, reason)))
        .collect();

    let mut per_station = Vec::new();
    let mut excluded = Vec::new();
    for r in results {
        match r {
            Ok(s) => per_station.push(s),
            Err((station_id, reason)) => excluded.push(ExcludedStation { station_id, reason }),
        }
    }
    // BTreeMap order survives the parallel collect, so sums are reproducible.
    let total_cost_generated = per_station.iter().map(|s| s.cost_generated).sum::<f64>();
    let max_savings = per_station.iter().map(|s| s.max_achievable_savings).sum::<f64>();
    let utils: Vec<f64> =
        per_station.iter().flat_map(|s| s.weeks.iter().filter_map(|w| w.utilization)).collect();
    let avg_utilization = (!utils.is_empty()).then(|| utils.iter().sum::<f64>() / utils.len() as f64);
    let capture_ratio = (max_savings > 0.0).then(|| -total_cost_generated / max_savings);
    let mape_weeks: usize = per_station.iter().map(|s| s.cpp_mape_weeks).sum();
    let cpp_mape = (mape_weeks > 0).then(|| {
        per_station.iter().filter_map(|s| s.cpp_mape.map(|m| m * s.cpp_mape_weeks as f64)).sum::<f64>() / mape_weeks as f64
    });
    Ok(BacktestReport {
        cell: config.cell(),
        policy: config.policy,
        total_cost_generated,
        avg_utilization,
        max_achievable_savings: max_savings,
        capture_ratio,
        cpp_mape,
        per_station,
        excluded,
    })
}

/// Runs all four ablation cells on the same data.
pub fn ablation_grid(records: &[StationWeekRecord], config: &BacktestConfig) -> Result<Vec<BacktestReport>, BacktestError> {
    AblationCell::GRID.iter().map(|&cell| run_backtest(records, &config.with_cell(cell))).collect()
}

fn replay_station(
    optimizer: &Optimizer,
    config: &BacktestConfig,
    station_id: &str,
    series: &[StationWeekRecord],
) -> Result<StationBreakdown, String> {
    let train = config.min_train_weeks;
    if series.len() <= train {
        return Err(format!("insufficient_history: {} weeks, need more than {train}", series.len()));
    }
    let cap = config.preprocess.d1_cap;
    let k = config.preprocess.effective_k();
    let view: Vec<CleanedRecord> =
        series.iter().map(|r| clean_record(r, config.preprocess.noise_reduction, cap)).collect();
    let truth: Vec<CleanedRecord> = series.iter().map(|r| clean_record(r, true, cap)).collect();
    let feedback_config = config.feedback_config();

    let truth_rates = RateSums::new(&truth);
    let mut state = FeedbackState::new(station_id);

    let mut weeks = Vec::with_capacity(series.len() - train);
    let mut feedback_errors = 0;
    let mut ape = Vec::new();
    for t in train..series.len() {
        let week = series[t].week;
        let (decision, profile) = decide(optimizer, config, station_id, week, &view[..t], &state, k, &series[t])
            .map_err(|e| format!("preprocess: {e}"))?;
        let predicted = profile.as_ref().map_or((0.0, 0.0), |p| (p.cpp_l_hat, p.cpp_h_hat));
        let (ref_l, ref_h) = truth_rates.around(t, config.scoring_half_window, predicted);
        let scored = RealizedCpp::from_week(&truth[t], ref_l, ref_h);
        if let (Some(p), Some((scenario, rate))) = (&profile, scored.observed) {
            let hat = match scenario {
                Scenario::H => p.cpp_h_hat,
                Scenario::L => p.cpp_l_hat,
            };
            if rate > 0.0 {
                ape.push((hat - rate).abs() / rate);
            }
        }
        let delta = decision.delta_star;
        let (u, cost) = if delta == 0.0 {
            (None, 0.0)
        } else {
            let u = utilization(delta, truth[t].observed_demand, truth[t].wk1_forecast).expect("nonzero delta");
            (Some(u), cost_generated(delta, u, scored.cpp_l, scored.cpp_h))
        };

        if config.policy == Policy::Model && config.feedback {
            let realized = RealizedCpp::from_week(&view[t], predicted.0, predicted.1);
            if state.apply_week(optimizer, &feedback_config, &decision, profile.as_ref(), &view[t], realized).is_err() {
                feedback_errors += 1;
            }
        }
        weeks.push(WeekScore { decision, utilization: u, cost_generated: cost, realized_regret: truth[t].realized_regret() });
    }

    let utils: Vec<f64> = weeks.iter().filter_map(|w| w.utilization).collect();
    Ok(StationBreakdown {
        station_id: station_id.to_string(),
        weeks_evaluated: weeks.len(),
        weeks_adjusted: utils.len(),
        cost_generated: weeks.iter().map(|w| w.cost_generated).sum(),
        max_achievable_savings: weeks.iter().map(|w| w.realized_regret).sum(),
        avg_utilization: (!utils.is_empty()).then(|| utils.iter().sum::<f64>() / utils.len() as f64),
        clamp_events: view[train..].iter().filter(|c| c.clamped).count(),
        feedback_errors,
        cpp_mape: (!ape.is_empty()).then(|| ape.iter().sum::<f64>() / ape.len() as f64),
        cpp_mape_weeks: ape.len(),
        weeks,
    })
}

#[allow(clippy::too_many_arguments)]
fn decide(
    optimizer: &Optimizer,
    config: &BacktestConfig,
    station_id: &str,
    week: Week,
    history: &[CleanedRecord],
    state: &FeedbackState,
    k: u32,
    actual: &StationWeekRecord,
) -> Result<(AdjustmentDecision, Option<CostProfile>), PreprocessError> {
    match config.policy {
        Policy::NoAdjustment => Ok((AdjustmentDecision::unadjusted(station_id, week, DecisionReason::Optimized), None)),
        Policy::PerfectForesight => {
            let mut d = AdjustmentDecision::unadjusted(station_id, week, DecisionReason::PerfectForesight);
            d.delta_star = actual.observed_demand - actual.wk1_forecast;
            Ok((d, None))
        }
        Policy::Model => {
            let weighted = weight_series(history, k)?;
            let corrections = if config.feedback { state.corrections() } else { CorrectionTerms::default() };
            match estimate_profile(station_id, &weighted, config.min_obs) {
                Ok(profile) => {
                    let d = optimizer.optimal_delta(week, &profile, &corrections).unwrap_or_else(|e| {
                        AdjustmentDecision::unadjusted(station_id, week, DecisionReason::from_error(&e))
                    });
                    Ok((d, Some(profile)))
                }
                Err(e) => {
                    let reason = DecisionReason::from_error(&OptimizerError::from(e));
                    Ok((AdjustmentDecision::unadjusted(station_id, week, reason), None))
                }
            }
        }
    }
}

/// One row per report: the ablation summary table.
pub fn write_summary_csv<W: Write>(sink: W, reports: &[BacktestReport]) -> Result<(), BacktestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "time_weighting",
        "noise_reduction",
        "policy",
        "total_cost_generated",
        "avg_utilization",
        "max_achievable_savings",
        "capture_ratio",
        "cpp_mape",
        "stations_evaluated",
        "stations_excluded",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        let policy = serde_json::to_value(r.policy).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        w.write_record([
            r.cell.time_weighting.to_string(),
            r.cell.noise_reduction.to_string(),
            policy,
            r.total_cost_generated.to_string(),
            opt(r.avg_utilization),
            r.max_achievable_savings.to_string(),
            opt(r.capture_ratio),
            opt(r.cpp_mape),
            r.per_station.len().to_string(),
            r.excluded.len().to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, ScenarioSpec};

    fn fleet(seed: u64) -> Vec<StationWeekRecord> {
        let spec = ScenarioSpec { n_stations: 4, n_weeks: 40, sigma_true: 300.0, seed, ..Default::default() };
        generate(&spec).unwrap().records
    }

    #[test]
    fn accounting_identity_holds() {
        let report = run_backtest(&fleet(3), &BacktestConfig::default()).unwrap();
        let by_week: f64 = report.per_station.iter().flat_map(|s| &s.weeks).map(|w| w.cost_generated).sum();
        assert_eq!(report.per_station.len(), 4);
        assert!((report.total_cost_generated - by_week).abs() <= 1e-9 * by_week.abs().max(1.0));
        let savings = max_achievable_savings(&fleet(3), &BacktestConfig::default());
        assert!((report.max_achievable_savings - savings).abs() <= 1e-9 * savings);
    }

    #[test]
    fn cpp_mape_is_small_for_constant_rates() {
        let spec = ScenarioSpec { n_stations: 3, n_weeks: 60, seed: 5, ..Default::default() };
        let report = run_backtest(&generate(&spec).unwrap().records, &BacktestConfig::default()).unwrap();
        let m = report.cpp_mape.unwrap();
        assert!(m < 0.05, "{m}");
        let n: usize = report.per_station.iter().map(|s| s.cpp_mape_weeks).sum();
        assert!(n > 100);
    }

    #[test]
    fn perfect_foresight_captures_everything() {
        let config = BacktestConfig { policy: Policy::PerfectForesight, ..Default::default() };
        let report = run_backtest(&fleet(5), &config).unwrap();
        assert!((report.capture_ratio.unwrap() - 1.0).abs() < 1e-9, "{:?}", report.capture_ratio);
    }

    #[test]
    fn no_adjustment_generates_nothing() {
        let config = BacktestConfig { policy: Policy::NoAdjustment, ..Default::default() };
        let report = run_backtest(&fleet(5), &config).unwrap();
        assert_eq!(report.total_cost_generated, 0.0);
        assert_eq!(report.avg_utilization, None);
    }

    #[test]
    fn short_histories_are_excluded() {
        let mut records = fleet(1);
        records.retain(|r| r.station_id != "S0000" || r.week < Week::from_iso(2024, 6).unwrap());
        let report = run_backtest(&records, &BacktestConfig::default()).unwrap();
        assert_eq!(report.excluded.len(), 1);
        assert_eq!(report.excluded[0].station_id, "S0000");
        assert!(report.excluded[0].reason.starts_with("insufficient_history"));
    }

    #[test]
    fn grid_order_and_summary_csv() {
        let reports = ablation_grid(&fleet(2), &BacktestConfig::default()).unwrap();
        let cells: Vec<_> = reports.iter().map(|r| r.cell).collect();
        assert_eq!(cells, AblationCell::GRID);
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("true,true,model,"));
    }

    #[test]
    fn rejects_bad_config() {
        let config = BacktestConfig { min_train_weeks: 1, ..Default::default() };
        assert!(matches!(run_backtest(&[], &config), Err(BacktestError::InvalidConfig(_))));
    }
}
