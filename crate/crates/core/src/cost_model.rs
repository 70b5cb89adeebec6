//! Per-station cost-per-package and error spread estimation, and the
//! piecewise-linear regret cost curve built from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::WeightedRecord;

pub const DEFAULT_MIN_OBS: usize = 4;

/// Which side of the forecast the demand landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Heaviness: demand above forecast, `e > 0`.
    H,
    /// Lightness: demand below forecast, `e < 0`.
    L,
}

impl Scenario {
    pub fn of(err_pkg: f64) -> Option<Self> {
        if err_pkg > 0.0 {
            Some(Self::H)
        } else if err_pkg < 0.0 {
            Some(Self::L)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CostModelError {
    #[error("insufficient data: {found} {what}, need {needed}")]
    InsufficientData { what: &'static str, found: usize, needed: usize },
    #[error("degenerate variance: all forecast errors are identical")]
    DegenerateVariance,
}

/// Estimated regret-cost shape for one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub station_id: String,
    /// Predicted heaviness cost per package.
    pub cpp_h_hat: f64,
    /// Predicted lightness cost per package.
    pub cpp_l_hat: f64,
    /// Standard deviation of the forecast error, packages.
    pub sigma: f64,
    pub n_h_obs: usize,
    pub n_l_obs: usize,
}

impl CostProfile {
    pub fn new(station_id: impl Into<String>, cpp_h_hat: f64, cpp_l_hat: f64, sigma: f64) -> Self {
        Self { station_id: station_id.into(), cpp_h_hat, cpp_l_hat, sigma, n_h_obs: 0, n_l_obs: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.cpp_h_hat.is_finite()
            && self.cpp_l_hat.is_finite()
            && self.cpp_h_hat >= 0.0
            && self.cpp_l_hat >= 0.0
            && self.sigma.is_finite()
            && self.sigma > 0.0
    }
}

/// Ratio of weight-scaled cleaned costs to weight-scaled absolute errors,
/// over records whose error sign matches `scenario`. Costs booked against
/// the other scenario are ignored.
pub fn estimate_cpp(weighted: &[WeightedRecord], scenario: Scenario, min_obs: usize) -> Result<f64, CostModelError> {
    let mut cost = 0.0;
    let mut packages = 0.0;
    let mut n = 0usize;
    for w in weighted {
        let r = &w.record;
        let e = r.metrics.err_pkg;
        if Scenario::of(e) != Some(scenario) {
            continue;
        }
        let c = match scenario {
            Scenario::H => r.cost_h_clean,
            Scenario::L => r.cost_l_clean,
        };
        let weight = f64::from(w.weight);
        cost += weight * c;
        packages += weight * e.abs();
        n += 1;
    }
    let needed = min_obs.max(1);
    if n < needed {
        let what = match scenario {
            Scenario::H => "heaviness observations",
            Scenario::L => "lightness observations",
        };
        return Err(CostModelError::InsufficientData { what, found: n, needed });
    }
    Ok(cost / packages)
}

/// Weighted standard deviation of the package error.
///
/// Weights are treated as reliability weights, so a uniform weight of any
/// size gives the ordinary `n - 1` sample standard deviation.
pub fn estimate_sigma(weighted: &[WeightedRecord]) -> Result<f64, CostModelError> {
    if weighted.len() < 2 {
        return Err(CostModelError::InsufficientData { what: "records", found: weighted.len(), needed: 2 });
    }
    let first = weighted[0].record.metrics.err_pkg;
    if weighted.iter().all(|w| w.record.metrics.err_pkg == first) {
        return Err(CostModelError::DegenerateVariance);
    }
    let (mut sw, mut sw2, mut swe) = (0.0, 0.0, 0.0);
    for w in weighted {
        let weight = f64::from(w.weight);
        sw += weight;
        sw2 += weight * weight;
        swe += weight * w.record.metrics.err_pkg;
    }
    let mean = swe / sw;
    let ss: f64 = weighted
        .iter()
        .map(|w| {
            let d = w.record.metrics.err_pkg - mean;
            f64::from(w.weight) * d * d
        })
        .sum();
    let var = ss / (sw - sw2 / sw);
    if var <= 0.0 || !var.is_finite() {
        return Err(CostModelError::DegenerateVariance);
    }
    Ok(var.sqrt())
}

pub fn estimate_profile(
    station_id: &str,
    weighted: &[WeightedRecord],
    min_obs: usize,
) -> Result<CostProfile, CostModelError> {
    let cpp_h_hat = estimate_cpp(weighted, Scenario::H, min_obs)?;
    let cpp_l_hat = estimate_cpp(weighted, Scenario::L, min_obs)?;
    let sigma = estimate_sigma(weighted)?;
    let count = |s| weighted.iter().filter(|w| Scenario::of(w.record.metrics.err_pkg) == Some(s)).count();
    Ok(CostProfile {
        station_id: station_id.to_string(),
        cpp_h_hat,
        cpp_l_hat,
        sigma,
        n_h_obs: count(Scenario::H),
        n_l_obs: count(Scenario::L),
    })
}

/// V-shaped regret: `-cpp_l * e` for `e <= 0`, `cpp_h * e` for `e > 0`.
pub fn regret_cost(err_pkg: f64, profile: &CostProfile) -> f64 {
    regret_with_slopes(err_pkg, profile.cpp_l_hat, profile.cpp_h_hat)
}

pub(crate) fn regret_with_slopes(err_pkg: f64, slope_l: f64, slope_h: f64) -> f64 {
    if err_pkg <= 0.0 {
        -slope_l * err_pkg + 0.0
    } else {
        slope_h * err_pkg
    }
}
