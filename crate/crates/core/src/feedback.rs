//! Realized performance of deployed adjustments and the self-regulation loop.
//!
//! Each week the realized demand is compared with the adjusted forecast:
//! how much of the adjustment was used ([`utilization`]), what it cost or
//! saved ([`cost_generated`]), and how the gap to the expected cost splits
//! into calibration, cost-prediction and unexplained parts
//! ([`decompose_error`]). [`FeedbackState`] keeps a per-station ledger and
//! rolling means that feed back into the next decision as
//! [`CorrectionTerms`].

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{CostProfile, Scenario};
use crate::fsio::write_atomic;
use crate::optimizer::{effective_slopes, AdjustmentDecision, CorrectionTerms, Optimizer};
use crate::preprocess::{time_weights, CleanedRecord, DEFAULT_K};
use crate::week::Week;

pub const DEFAULT_FEEDBACK_WINDOW: usize = 26;

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("utilization is undefined for a zero adjustment")]
    ZeroDelta,
    #[error("week {week} for station {station_id} is not after the last recorded week {last}")]
    OutOfOrderWeek { station_id: String, week: Week, last: Week },
    #[error("outcome for station {found} applied to state of {expected}")]
    StationMismatch { expected: String, found: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("state file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("state file {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Rolling window, in weeks.
    pub window: usize,
    /// Recentness weighting inside the window; 1 gives a plain mean.
    pub k: u32,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { window: DEFAULT_FEEDBACK_WINDOW, k: DEFAULT_K }
    }
}

/// Share of the adjustment that moved the forecast towards the demand.
/// Negative adjustments use the mirrored rule.
pub fn utilization(delta: f64, observed_demand: f64, wk1_forecast: f64) -> Result<f64, FeedbackError> {
    let err = observed_demand - wk1_forecast;
    let (useful, size) = if delta > 0.0 {
        (err.max(0.0), delta)
    } else if delta < 0.0 {
        ((-err).max(0.0), -delta)
    } else {
        return Err(FeedbackError::ZeroDelta);
    };
    Ok((useful / size).min(1.0))
}

/// Incremental regret cost of the adjustment versus no adjustment;
/// negative values are savings. For `Δ > 0` the unused part is charged at
/// the lightness rate and the used part saves at the heaviness rate; the
/// roles swap for `Δ < 0`.
pub fn cost_generated(delta: f64, u: f64, cpp_l: f64, cpp_h: f64) -> f64 {
    if delta >= 0.0 {
        delta * ((1.0 - u) * cpp_l - u * cpp_h)
    } else {
        -delta * ((1.0 - u) * cpp_h - u * cpp_l)
    }
}

/// Cost per package realized in one week.
///
/// Only the scenario that happened is observable; the other rate comes from
/// a reference estimate supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedCpp {
    pub cpp_l: f64,
    pub cpp_h: f64,
    /// The scenario that happened and its realized rate.
    pub observed: Option<(Scenario, f64)>,
}

impl RealizedCpp {
    pub fn from_week(record: &CleanedRecord, reference_l: f64, reference_h: f64) -> Self {
        let e = record.metrics.err_pkg;
        match Scenario::of(e) {
            Some(Scenario::H) => {
                let rate = record.cost_h_clean / e;
                Self { cpp_l: reference_l, cpp_h: rate, observed: Some((Scenario::H, rate)) }
            }
            Some(Scenario::L) => {
                let rate = record.cost_l_clean / -e;
                Self { cpp_l: rate, cpp_h: reference_h, observed: Some((Scenario::L, rate)) }
            }
            None => Self { cpp_l: reference_l, cpp_h: reference_h, observed: None },
        }
    }
}

/// What happened in one station-week after an adjustment was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedOutcome {
    pub station_id: String,
    pub week: Week,
    pub delta: f64,
    /// `o - f` against the unadjusted forecast.
    pub observed_error: f64,
    /// `None` when no adjustment was applied.
    pub utilization: Option<f64>,
    pub cost_generated: f64,
    pub expected_cost: f64,
    pub eps_calibration: f64,
    pub eps_cpp: f64,
    pub eps_unexplained: f64,
    /// Realized minus predicted heaviness rate, in heaviness weeks.
    pub cpp_h_delta: Option<f64>,
    /// Realized minus predicted lightness rate, in lightness weeks.
    pub cpp_l_delta: Option<f64>,
}

/// Inputs for scoring one decision against its actuals.
#[derive(Debug, Clone, Copy)]
pub struct OutcomeInputs<'a> {
    pub observed_demand: f64,
    pub wk1_forecast: f64,
    pub realized: RealizedCpp,
    pub decision: &'a AdjustmentDecision,
    /// Profile behind the decision; `None` when the station was not estimable.
    pub profile: Option<&'a CostProfile>,
    /// Corrections the decision was made with.
    pub assumed: CorrectionTerms,
    /// Mean of `o - f` observed once this week is included.
    pub observed_calib_mean: f64,
}

/// Scores a decision and splits `C - E[Ĉ]` into calibration, cost-rate and
/// residual terms. The residual is defined as whatever the first two leave,
/// so the four-term identity holds exactly.
pub fn decompose_error(optimizer: &Optimizer, inputs: &OutcomeInputs<'_>) -> Result<RealizedOutcome, FeedbackError> {
    let decision = inputs.decision;
    let delta = decision.delta_star;
    let observed_error = inputs.observed_demand - inputs.wk1_forecast;
    let realized = inputs.realized;

    let (u, cost) = if delta == 0.0 {
        (None, 0.0)
    } else {
        let u = utilization(delta, inputs.observed_demand, inputs.wk1_forecast)?;
        (Some(u), cost_generated(delta, u, realized.cpp_l, realized.cpp_h))
    };

    let (expected, eps_calibration, eps_cpp, cpp_h_delta, cpp_l_delta) = match inputs.profile {
        Some(profile) => {
            let (slope_l, slope_h) = effective_slopes(profile, &inputs.assumed);
            let sigma = profile.sigma;
            let assumed_mean = inputs.assumed.calib_mean - delta;
            let observed_mean = inputs.observed_calib_mean - delta;
            let (lower_assumed, upper_assumed) = optimizer.first_moments(assumed_mean, sigma);
            let (lower_observed, _) = optimizer.first_moments(observed_mean, sigma);
            let expected = decision
                .expected_cost_at_delta
                .unwrap_or_else(|| -slope_l * lower_assumed + slope_h * upper_assumed);
            // Lightness branch only, as the calibration term is defined.
            let eps_calibration = -slope_l * (lower_observed - lower_assumed);
            let eps_cpp = -(realized.cpp_l - slope_l) * lower_assumed + (realized.cpp_h - slope_h) * upper_assumed;
            let (dh, dl) = match realized.observed {
                Some((Scenario::H, rate)) => (Some(rate - profile.cpp_h_hat), None),
                Some((Scenario::L, rate)) => (None, Some(rate - profile.cpp_l_hat)),
                None => (None, None),
            };
            (expected, eps_calibration, eps_cpp, dh, dl)
        }
        None => (decision.expected_cost_at_delta.unwrap_or(0.0), 0.0, 0.0, None, None),
    };

    let eps_unexplained = cost - expected - eps_calibration - eps_cpp;
    let outcome = RealizedOutcome {
        station_id: decision.station_id.clone(),
        week: decision.week,
        delta,
        observed_error,
        utilization: u,
        cost_generated: cost,
        expected_cost: expected,
        eps_calibration,
        eps_cpp,
        eps_unexplained,
        cpp_h_delta,
        cpp_l_delta,
    };
    let finite = [outcome.cost_generated, outcome.expected_cost, outcome.eps_calibration, outcome.eps_cpp]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(FeedbackError::NonFinite("realized outcome"));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    /// The week was already in the ledger; nothing changed.
    AlreadyApplied,
}

/// Per-station feedback memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    pub station_id: String,
    pub calib_mean: f64,
    pub cpp_l_bar: f64,
    pub cpp_h_bar: f64,
    pub ledger: Vec<RealizedOutcome>,
}

impl FeedbackState {
    pub fn new(station_id: impl Into<String>) -> Self {
        Self { station_id: station_id.into(), calib_mean: 0.0, cpp_l_bar: 0.0, cpp_h_bar: 0.0, ledger: Vec::new() }
    }

    pub fn corrections(&self) -> CorrectionTerms {
        CorrectionTerms { calib_mean: self.calib_mean, cpp_l_bar: self.cpp_l_bar, cpp_h_bar: self.cpp_h_bar }
    }

    pub fn last_week(&self) -> Option<Week> {
        self.ledger.last().map(|o| o.week)
    }

    /// Rolling calibration mean as it would be after observing
    /// `observed_error` in `week`, without changing the state.
    pub fn calib_mean_with(&self, week: Week, observed_error: f64, config: &FeedbackConfig) -> f64 {
        let window = self.window_entries(week, config, false);
        let values: Vec<f64> = window.iter().map(|o| o.observed_error).chain([observed_error]).collect();
        weighted_mean(&values, config.k).unwrap_or(0.0)
    }

    /// Appends `outcome` and recomputes the rolling means. Re-applying the
    /// latest week is a no-op; earlier weeks are rejected.
    pub fn update(&mut self, outcome: RealizedOutcome, config: &FeedbackConfig) -> Result<UpdateStatus, FeedbackError> {
        if outcome.station_id != self.station_id {
            return Err(FeedbackError::StationMismatch {
                expected: self.station_id.clone(),
                found: outcome.station_id,
            });
        }
        if !outcome.observed_error.is_finite() {
            return Err(FeedbackError::NonFinite("observed error"));
        }
        if let Some(last) = self.last_week() {
            if outcome.week == last {
                return Ok(UpdateStatus::AlreadyApplied);
            }
            if outcome.week < last {
                return Err(FeedbackError::OutOfOrderWeek {
                    station_id: self.station_id.clone(),
                    week: outcome.week,
                    last,
                });
            }
        }
        self.ledger.push(outcome);
        self.recompute(config);
        Ok(UpdateStatus::Applied)
    }

    /// Ledger entries in the `window` weeks ending at `newest`, optionally
    /// leaving `newest` itself out.
    fn window_entries(&self, newest: Week, config: &FeedbackConfig, include_newest: bool) -> &[RealizedOutcome] {
        let start = newest.offset(1 - config.window as i32);
        let first = self.ledger.partition_point(|o| o.week < start);
        let end = self.ledger.partition_point(|o| o.week < newest || (include_newest && o.week == newest));
        &self.ledger[first..end]
    }

    fn recompute(&mut self, config: &FeedbackConfig) {
        let Some(last) = self.last_week() else {
            return;
        };
        let window = self.window_entries(last, config, true);
        let errors: Vec<f64> = window.iter().map(|o| o.observed_error).collect();
        let dh: Vec<f64> = window.iter().filter_map(|o| o.cpp_h_delta).filter(|v| v.is_finite()).collect();
        let dl: Vec<f64> = window.iter().filter_map(|o| o.cpp_l_delta).filter(|v| v.is_finite()).collect();
        self.calib_mean = weighted_mean(&errors, config.k).unwrap_or(0.0);
        self.cpp_h_bar = weighted_mean(&dh, config.k).unwrap_or(0.0);
        self.cpp_l_bar = weighted_mean(&dl, config.k).unwrap_or(0.0);
    }

    /// Scores `decision` against this week's actuals and folds the result
    /// into the state. The decision is assumed to have been made with the
    /// state's current corrections.
    pub fn apply_week(
        &mut self,
        optimizer: &Optimizer,
        config: &FeedbackConfig,
        decision: &AdjustmentDecision,
        profile: Option<&CostProfile>,
        actual: &CleanedRecord,
        realized: RealizedCpp,
    ) -> Result<(RealizedOutcome, UpdateStatus), FeedbackError> {
        let inputs = OutcomeInputs {
            observed_demand: actual.observed_demand,
            wk1_forecast: actual.wk1_forecast,
            realized,
            decision,
            profile,
            assumed: self.corrections(),
            observed_calib_mean: self.calib_mean_with(decision.week, actual.metrics.err_pkg, config),
        };
        let outcome = decompose_error(optimizer, &inputs)?;
        let status = self.update(outcome.clone(), config)?;
        Ok((outcome, status))
    }

    pub fn load(dir: &Path, station_id: &str) -> Result<Self, FeedbackError> {
        let path = state_path(dir, station_id);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|source| FeedbackError::Json { path, source }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new(station_id)),
            Err(source) => Err(FeedbackError::Io { path, source }),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, FeedbackError> {
        let path = state_path(dir, &self.station_id);
        let json = serde_json::to_vec_pretty(self).map_err(|source| FeedbackError::Json { path: path.clone(), source })?;
        fs::create_dir_all(dir).map_err(|source| FeedbackError::Io { path: dir.to_path_buf(), source })?;
        write_atomic(&path, &json).map_err(|source| FeedbackError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

/// Time-weighted mean with `ceil(k * rank / n)` weights, oldest first.
fn weighted_mean(values: &[f64], k: u32) -> Option<f64> {
    let weights = time_weights(values.len(), k.max(1)).ok()?;
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in values.iter().zip(weights) {
        num += f64::from(w) * v;
        den += f64::from(w);
    }
    Some(num / den)
}

/// `<dir>/<station_id>.json`, with characters outside `[A-Za-z0-9._-]`
/// percent-encoded.
pub fn state_path(dir: &Path, station_id: &str) -> PathBuf {
    let mut name = String::with_capacity(station_id.len() + 5);
    for b in station_id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_') || (b == b'.' && !name.is_empty()) {
            name.push(b as char);
        } else {
            name.push_str(&format!("%{b:02X}"));
        }
    }
    name.push_str(".json");
    dir.join(name)
}
