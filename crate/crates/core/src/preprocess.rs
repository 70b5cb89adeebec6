//! Recentness time-weighting and D-1 noise reduction.
//!
//! Both steps run per station on a week-ordered series. Time-weighting
//! assigns each record an integer multiplicity `ceil(k * rank / n)`, so the
//! oldest record gets the smallest weight and the newest gets `k`. Weighted
//! records are never physically duplicated; downstream sums scale by weight.
//!
//! Noise reduction strips the part of the raw regret costs caused by the
//! day-ahead forecast moving away from (or towards) the observed demand.
//! The attributable share is capped at `d1_cap` of the raw cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ErrorMetrics, StationWeekRecord};
use crate::week::Week;

pub const DEFAULT_K: u32 = 10;
pub const DEFAULT_D1_CAP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub k: u32,
    pub time_weighting: bool,
    pub noise_reduction: bool,
    pub d1_cap: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, time_weighting: true, noise_reduction: true, d1_cap: DEFAULT_D1_CAP }
    }
}

impl PreprocessConfig {
    /// `k` actually applied: time-weighting off forces `k = 1`.
    pub fn effective_k(&self) -> u32 {
        if self.time_weighting {
            self.k
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.k == 0 {
            return Err(PreprocessError::InvalidK);
        }
        if !(self.d1_cap.is_finite() && (0.0..1.0).contains(&self.d1_cap)) {
            return Err(PreprocessError::InvalidCap(self.d1_cap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PreprocessError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("k must be a positive integer")]
    InvalidK,
    #[error("d1 cap must be in [0, 1), got {0}")]
    InvalidCap(f64),
    #[error("records are not strictly ascending by week at index {0}")]
    Unordered(usize),
}

/// Recentness weights `ceil(k * rank / n)` for `n` week-ordered records,
/// rank 1 being the oldest. Integer arithmetic keeps the ceiling exact.
pub fn time_weights(n: usize, k: u32) -> Result<Vec<u32>, PreprocessError> {
    if n == 0 {
        return Err(PreprocessError::EmptyDataset);
    }
    if k == 0 {
        return Err(PreprocessError::InvalidK);
    }
    let (n64, k64) = (n as u64, u64::from(k));
    Ok((1..=n64).map(|rank| (k64 * rank).div_ceil(n64) as u32).collect())
}

/// Share of the day-ahead revision that moved the forecast towards the
/// observed demand. Mirrored for lightness (`eps < 0`); zero when `eps == 0`.
pub fn d1_utilization(eps: f64, phi: f64) -> f64 {
    if eps > 0.0 {
        if phi >= 0.0 {
            eps.min(phi)
        } else {
            0.0
        }
    } else if eps < 0.0 {
        if phi <= 0.0 {
            (-eps).min(-phi)
        } else {
            0.0
        }
    } else {
        0.0
    }
}

/// Signed multipliers `(N_H / C_H^raw, N_L / C_L^raw)`.
///
/// For `eps >= 0` the heaviness rules apply directly; for `eps < 0` the
/// roles of H and L and the sign of `phi` are swapped. Every multiplier has
/// magnitude at most `cap`.
pub fn noise_factors(eps: f64, phi: f64, u: f64, cap: f64) -> (f64, f64) {
    // Noise from a revision in the helpful direction (negative: it saved cost)
    // and from the non-utilized part of the revision.
    let helped = -u.min(cap);
    let wasted = (phi.abs() - u).min(cap);
    if eps >= 0.0 {
        if phi >= 0.0 {
            (helped + 0.0, wasted)
        } else {
            (wasted, helped + 0.0)
        }
    } else if phi <= 0.0 {
        (wasted, helped + 0.0)
    } else {
        (helped + 0.0, wasted)
    }
}

/// `(N_H, N_L)` for one record.
pub fn noise_costs(eps: f64, phi: f64, u: f64, cost_h_raw: f64, cost_l_raw: f64, cap: f64) -> (f64, f64) {
    let (fh, fl) = noise_factors(eps, phi, u, cap);
    (fh * cost_h_raw, fl * cost_l_raw)
}

/// `raw - noise`, clamped at zero. The flag reports whether the clamp fired.
pub fn clean_cost(raw: f64, noise: f64) -> (f64, bool) {
    let clean = raw - noise;
    if clean < 0.0 {
        (0.0, true)
    } else {
        (clean, false)
    }
}

/// A record with its error metrics and cleaned costs. Plain numbers only,
/// so series can be re-weighted cheaply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanedRecord {
    pub week: Week,
    pub observed_demand: f64,
    pub wk1_forecast: f64,
    pub metrics: ErrorMetrics,
    pub cost_h_raw: f64,
    pub cost_l_raw: f64,
    pub d1_utilization: f64,
    pub noise_h: f64,
    pub noise_l: f64,
    pub cost_h_clean: f64,
    pub cost_l_clean: f64,
    pub clamped: bool,
}

impl CleanedRecord {
    /// Cleaned cost of the scenario that actually happened (0 when `e == 0`).
    pub fn realized_regret(&self) -> f64 {
        let e = self.metrics.err_pkg;
        if e > 0.0 {
            self.cost_h_clean
        } else if e < 0.0 {
            self.cost_l_clean
        } else {
            0.0
        }
    }
}

pub fn clean_record(r: &StationWeekRecord, noise_reduction: bool, cap: f64) -> CleanedRecord {
    let metrics = r.error_metrics();
    let (eps, phi) = (metrics.err_pct, metrics.d1_delta_pct);
    let u = d1_utilization(eps, phi);
    let (noise_h, noise_l) =
        if noise_reduction { noise_costs(eps, phi, u, r.cost_h_raw, r.cost_l_raw, cap) } else { (0.0, 0.0) };
    let (cost_h_clean, ch) = clean_cost(r.cost_h_raw, noise_h);
    let (cost_l_clean, cl) = clean_cost(r.cost_l_raw, noise_l);
    CleanedRecord {
        week: r.week,
        observed_demand: r.observed_demand,
        wk1_forecast: r.wk1_forecast,
        metrics,
        cost_h_raw: r.cost_h_raw,
        cost_l_raw: r.cost_l_raw,
        d1_utilization: u,
        noise_h,
        noise_l,
        cost_h_clean,
        cost_l_clean,
        clamped: ch || cl,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedRecord {
    pub record: CleanedRecord,
    pub weight: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessedSeries {
    pub records: Vec<WeightedRecord>,
    pub clamp_events: usize,
}

impl PreprocessedSeries {
    /// `|D*|`, the number of logical copies.
    pub fn logical_len(&self) -> u64 {
        self.records.iter().map(|r| u64::from(r.weight)).sum()
    }
}

/// Weights an already-cleaned, week-ordered series.
pub fn weight_series(cleaned: &[CleanedRecord], k: u32) -> Result<Vec<WeightedRecord>, PreprocessError> {
    if let Some(i) = cleaned.windows(2).position(|w| w[0].week >= w[1].week) {
        return Err(PreprocessError::Unordered(i + 1));
    }
    let weights = time_weights(cleaned.len(), k)?;
    Ok(cleaned.iter().zip(weights).map(|(&record, weight)| WeightedRecord { record, weight }).collect())
}

/// Builds `D*` for one station from its week-ordered records.
pub fn preprocess_station(
    records: &[StationWeekRecord],
    config: &PreprocessConfig,
) -> Result<PreprocessedSeries, PreprocessError> {
    config.validate()?;
    let cleaned: Vec<_> =
        records.iter().map(|r| clean_record(r, config.noise_reduction, config.d1_cap)).collect();
    let clamp_events = cleaned.iter().filter(|c| c.clamped).count();
    let records = weight_series(&cleaned, config.effective_k())?;
    Ok(PreprocessedSeries { records, clamp_events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn weight_examples() {
        assert_eq!(time_weights(2, 10).unwrap(), vec![5, 10]);
        assert_eq!(time_weights(10, 10).unwrap(), (1..=10).collect::<Vec<_>>());
        assert!(time_weights(7, 1).unwrap().iter().all(|&w| w == 1));
        assert_eq!(time_weights(0, 10), Err(PreprocessError::EmptyDataset));
        assert_eq!(time_weights(3, 0), Err(PreprocessError::InvalidK));
    }

    #[test]
    fn utilization_examples() {
        assert!(close(d1_utilization(0.08, 0.03), 0.03));
        assert_eq!(d1_utilization(0.08, -0.02), 0.0);
        assert!(close(d1_utilization(0.02, 0.09), 0.02));
        assert!(close(d1_utilization(-0.08, -0.03), 0.03));
        assert_eq!(d1_utilization(-0.08, 0.03), 0.0);
        assert_eq!(d1_utilization(0.0, 0.03), 0.0);
    }

    #[test]
    fn noise_examples() {
        let (nh, _) = noise_costs(0.08, 0.03, d1_utilization(0.08, 0.03), 100.0, 0.0, 0.05);
        assert!(close(nh, -3.0));
        let (nh, _) = noise_costs(0.08, -0.10, d1_utilization(0.08, -0.10), 100.0, 0.0, 0.05);
        assert!(close(nh, 5.0));
        for eps in [-0.1, 0.0, 0.1] {
            let (nh, nl) = noise_costs(eps, 0.0, d1_utilization(eps, 0.0), 100.0, 80.0, 0.05);
            assert_eq!((nh, nl), (0.0, 0.0));
            assert!(nh.is_sign_positive() && nl.is_sign_positive());
        }
    }

    #[test]
    fn overshoot_charges_the_opposite_scenario() {
        // Heaviness week, D-1 overshoots by 0.07: 0.02 utilized, 0.05 wasted
        // into lightness cost.
        let u = d1_utilization(0.02, 0.09);
        let (nh, nl) = noise_costs(0.02, 0.09, u, 100.0, 100.0, 0.05);
        assert!(close(nh, -2.0));
        assert!(close(nl, 5.0));
        // Mirror: lightness week with a downward overshoot.
        let u = d1_utilization(-0.02, -0.09);
        let (nh, nl) = noise_costs(-0.02, -0.09, u, 100.0, 100.0, 0.05);
        assert!(close(nl, -2.0));
        assert!(close(nh, 5.0));
    }

    #[test]
    fn clean_examples() {
        assert_eq!(clean_cost(100.0, -3.0), (103.0, false));
        assert_eq!(clean_cost(100.0, 0.0), (100.0, false));
        assert_eq!(clean_cost(10.0, 12.0), (0.0, true));
    }

    #[test]
    fn rejects_unordered_series() {
        let rec = |w: i32| StationWeekRecord {
            station_id: "S".into(),
            week: Week::from_ordinal(w),
            observed_demand: 10.0,
            wk1_forecast: 10.0,
            d1_forecast: 10.0,
            cost_h_raw: 0.0,
            cost_l_raw: 0.0,
        };
        let err = preprocess_station(&[rec(2), rec(1)], &PreprocessConfig::default()).unwrap_err();
        assert_eq!(err, PreprocessError::Unordered(1));
        let err = preprocess_station(&[], &PreprocessConfig::default()).unwrap_err();
        assert_eq!(err, PreprocessError::EmptyDataset);
    }

    #[test]
    fn disabled_switches_are_identity() {
        let records: Vec<_> = (0..6)
            .map(|i| StationWeekRecord {
                station_id: "S".into(),
                week: Week::from_ordinal(i),
                observed_demand: 100.0 + 10.0 * f64::from(i) - 20.0,
                wk1_forecast: 100.0,
                d1_forecast: 95.0 + 3.0 * f64::from(i),
                cost_h_raw: 7.0 * f64::from(i),
                cost_l_raw: 3.0,
            })
            .collect();
        let config = PreprocessConfig { time_weighting: false, noise_reduction: false, ..Default::default() };
        let series = preprocess_station(&records, &config).unwrap();
        for (w, r) in series.records.iter().zip(&records) {
            assert_eq!(w.weight, 1);
            assert_eq!(w.record.cost_h_clean, r.cost_h_raw);
            assert_eq!(w.record.cost_l_clean, r.cost_l_raw);
        }
        assert_eq!(series.logical_len(), 6);
    }

    proptest! {
        #[test]
        fn noise_is_capped(eps in -0.5f64..0.5, phi in -0.5f64..0.5, ch in 0.0f64..1e6, cl in 0.0f64..1e6, cap in 0.0f64..0.2) {
            let u = d1_utilization(eps, phi);
            prop_assert!(u >= 0.0);
            let (nh, nl) = noise_costs(eps, phi, u, ch, cl, cap);
            prop_assert!(nh.abs() <= cap * ch + 1e-9);
            prop_assert!(nl.abs() <= cap * cl + 1e-9);
            let (clean_h, clamped) = clean_cost(ch, nh);
            prop_assert!(!clamped);
            prop_assert_eq!(clean_h, ch - nh);
        }

        #[test]
        fn utilization_needs_a_helpful_revision(eps in -0.5f64..0.5, phi in -0.5f64..0.5) {
            // Positive only when the D-1 revision points from f towards o.
            if d1_utilization(eps, phi) > 0.0 {
                prop_assert!(eps * phi > 0.0);
            }
        }

        #[test]
        fn weights_are_monotone_and_bounded(n in 1usize..300, k in 1u32..30) {
            let w = time_weights(n, k).unwrap();
            prop_assert_eq!(*w.last().unwrap(), k);
            prop_assert!(w.iter().all(|&x| (1..=k).contains(&x)));
            prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
        }
    }
}
