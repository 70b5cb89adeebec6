//! Expected regret cost under a shifted Gaussian error, and the forecast
//! adjustment that minimizes it.
//!
//! With adjustment `Δ` the error `e = o - (f + Δ)` is modeled as
//! `N(calib_mean - Δ, σ²)`. Lightness is charged at slope
//! `cpp_l_hat + cpp_l_bar` and heaviness at `cpp_h_hat + cpp_h_bar`, both
//! clamped at zero. The expected cost is integrated numerically and `Δ*` is
//! found by golden-section search; the objective is convex in `Δ`.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::cost_model::{CostModelError, CostProfile};
use crate::quadrature::{QuadConfig, SplitGaussian};
use crate::search::golden_section;
use crate::week::Week;

/// Feedback corrections folded into the optimization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTerms {
    /// Observed mean of `o - f`, packages.
    pub calib_mean: f64,
    /// Mean realized-minus-predicted lightness cost per package.
    pub cpp_l_bar: f64,
    /// Mean realized-minus-predicted heaviness cost per package.
    pub cpp_h_bar: f64,
}

impl CorrectionTerms {
    pub fn is_finite(&self) -> bool {
        self.calib_mean.is_finite() && self.cpp_l_bar.is_finite() && self.cpp_h_bar.is_finite()
    }
}

/// Cost slopes actually charged: `(lightness, heaviness)`, clamped at 0.
pub fn effective_slopes(profile: &CostProfile, corrections: &CorrectionTerms) -> (f64, f64) {
    (
        (profile.cpp_l_hat + corrections.cpp_l_bar).max(0.0),
        (profile.cpp_h_hat + corrections.cpp_h_bar).max(0.0),
    )
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptimizerError {
    #[error("invalid profile for station {0}")]
    InvalidProfile(String),
    #[error("invalid correction terms")]
    InvalidCorrections,
    #[error("both cost slopes are zero")]
    DegenerateCosts,
    #[error("expected cost is not finite at delta = {0}")]
    NonFiniteResult(f64),
    #[error(transparent)]
    CostModel(#[from] CostModelError),
}

pub const DEFAULT_TOL: f64 = 1e-6;
/// Half-width of the search bracket around `calib_mean`, in sigmas.
pub const SEARCH_HALF_WIDTH: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub quad: QuadConfig,
    /// Search stops when the bracket is narrower than `tol · σ`.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { quad: QuadConfig::default(), tol: DEFAULT_TOL }
    }
}

/// Reason attached to every decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    Optimized,
    InsufficientData,
    DegenerateVariance,
    DegenerateCosts,
    InvalidProfile,
    NonFiniteResult,
    /// Backtest benchmark that adjusts by the realized error.
    PerfectForesight,
}

impl DecisionReason {
    pub fn from_error(e: &OptimizerError) -> Self {
        match e {
            OptimizerError::InvalidProfile(_) | OptimizerError::InvalidCorrections => Self::InvalidProfile,
            OptimizerError::DegenerateCosts => Self::DegenerateCosts,
            OptimizerError::NonFiniteResult(_) => Self::NonFiniteResult,
            OptimizerError::CostModel(CostModelError::InsufficientData { .. }) => Self::InsufficientData,
            OptimizerError::CostModel(CostModelError::DegenerateVariance) => Self::DegenerateVariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentDecision {
    pub station_id: String,
    pub week: Week,
    pub delta_star: f64,
    /// Probability of lightness under the adjusted forecast.
    pub p_l_star: f64,
    pub expected_cost_at_delta: Option<f64>,
    pub expected_cost_at_zero: Option<f64>,
    pub reason: DecisionReason,
}

impl AdjustmentDecision {
    pub fn p_h_star(&self) -> f64 {
        1.0 - self.p_l_star
    }

    /// No adjustment, with the reason it was withheld.
    pub fn unadjusted(station_id: impl Into<String>, week: Week, reason: DecisionReason) -> Self {
        Self {
            station_id: station_id.into(),
            week,
            delta_star: 0.0,
            p_l_star: 0.5,
            expected_cost_at_delta: None,
            expected_cost_at_zero: None,
            reason,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    integrator: SplitGaussian,
    config: SolverConfig,
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::new(SolverConfig::default())
    }
}

impl Optimizer {
    pub fn new(config: SolverConfig) -> Self {
        Self { integrator: SplitGaussian::new(config.quad), config }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Partial first moments of the error density `N(mean, σ²)` split at 0.
    pub fn first_moments(&self, mean: f64, sigma: f64) -> (f64, f64) {
        self.integrator.first_moments(mean, sigma)
    }

    /// `E[Ĉ_L] + E[Ĉ_H]` for an error density `N(mean, σ²)` and the given slopes.
    pub fn expected_cost_raw(&self, mean: f64, sigma: f64, slope_l: f64, slope_h: f64) -> f64 {
        let (lower, upper) = self.integrator.first_moments(mean, sigma);
        -slope_l * lower + slope_h * upper
    }

    pub fn expected_cost(
        &self,
        delta: f64,
        profile: &CostProfile,
        corrections: &CorrectionTerms,
    ) -> Result<f64, OptimizerError> {
        check_inputs(profile, corrections)?;
        let (slope_l, slope_h) = effective_slopes(profile, corrections);
        self.objective(delta, profile.sigma, corrections.calib_mean, slope_l, slope_h)
    }

    fn objective(&self, delta: f64, sigma: f64, calib: f64, slope_l: f64, slope_h: f64) -> Result<f64, OptimizerError> {
        let cost = self.expected_cost_raw(calib - delta, sigma, slope_l, slope_h);
        if cost.is_finite() {
            Ok(cost)
        } else {
            Err(OptimizerError::NonFiniteResult(delta))
        }
    }

    /// Minimizes the expected cost over `Δ`.
    pub fn optimal_delta(
        &self,
        week: Week,
        profile: &CostProfile,
        corrections: &CorrectionTerms,
    ) -> Result<AdjustmentDecision, OptimizerError> {
        check_inputs(profile, corrections)?;
        let (slope_l, slope_h) = effective_slopes(profile, corrections);
        if slope_l == 0.0 && slope_h == 0.0 {
            return Err(OptimizerError::DegenerateCosts);
        }
        let sigma = profile.sigma;
        let calib = corrections.calib_mean;
        let objective = |delta: f64| self.objective(delta, sigma, calib, slope_l, slope_h);
        let half = SEARCH_HALF_WIDTH * sigma;
        let found = golden_section(objective, calib - half, calib + half, self.config.tol * sigma)?;
        let at_zero = objective(0.0)?;
        let (delta_star, at_delta) = if at_zero <= found.fx { (0.0, at_zero) } else { (found.x, found.fx) };

        let p_l_star = if slope_l > 0.0 && slope_h > 0.0 {
            slope_h / (slope_l + slope_h)
        } else {
            // One free side: the minimizer sits on the bracket edge, so report
            // the lightness mass actually implied there.
            Normal::new(0.0, 1.0).expect("standard normal").cdf((delta_star - calib) / sigma)
        };
        Ok(AdjustmentDecision {
            station_id: profile.station_id.clone(),
            week,
            delta_star,
            p_l_star,
            expected_cost_at_delta: Some(at_delta),
            expected_cost_at_zero: Some(at_zero),
            reason: DecisionReason::Optimized,
        })
    }

    /// Decides every station in `fleet`. Stations without a usable profile
    /// get `Δ = 0` and a reason code.
    pub fn solve_fleet(
        &self,
        fleet: &[FleetEntry],
        corrections: &HashMap<String, CorrectionTerms>,
    ) -> Vec<AdjustmentDecision> {
        fleet
            .par_iter()
            .map(|entry| {
                let result = entry.profile.clone().map_err(OptimizerError::from).and_then(|profile| {
                    let c = corrections.get(&entry.station_id).copied().unwrap_or_default();
                    self.optimal_delta(entry.week, &profile, &c)
                });
                result.unwrap_or_else(|e| {
                    AdjustmentDecision::unadjusted(entry.station_id.clone(), entry.week, DecisionReason::from_error(&e))
                })
            })
            .collect()
    }
}

fn check_inputs(profile: &CostProfile, corrections: &CorrectionTerms) -> Result<(), OptimizerError> {
    if !profile.is_valid() {
        return Err(OptimizerError::InvalidProfile(profile.station_id.clone()));
    }
    if !corrections.is_finite() {
        return Err(OptimizerError::InvalidCorrections);
    }
    Ok(())
}

/// One station to decide: its estimated profile (or why it has none) and
/// the week the adjustment applies to.
#[derive(Debug, Clone)]
pub struct FleetEntry {
    pub station_id: String,
    pub week: Week,
    pub profile: Result<CostProfile, CostModelError>,
}

pub fn write_decisions_csv<W: Write>(sink: W, decisions: &[AdjustmentDecision]) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(sink);
    for d in decisions {
        writer.serialize(d)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_decisions_csv<R: Read>(source: R) -> Result<Vec<AdjustmentDecision>, csv::Error> {
    csv::Reader::from_reader(source).deserialize().collect()
}

pub fn write_profiles_json<W: Write>(sink: W, profiles: &[CostProfile]) -> Result<(), serde_json::Error> {
    serde_json::to_writer_pretty(sink, profiles)
}

pub fn read_profiles_json<R: Read>(source: R) -> Result<Vec<CostProfile>, serde_json::Error> {
    serde_json::from_reader(source)
}
