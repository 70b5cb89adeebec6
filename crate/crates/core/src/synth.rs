//! Synthetic station fleets with known cost rates, bias and D-1 behavior.
//!
//! Every station draws from its own ChaCha stream (`seed`, stream = station
//! index), so output is byte-identical for a fixed seed regardless of how
//! stations are scheduled.
//!
//! D-1 noise is injected by inverting the noise-reduction rule: the raw cost
//! is chosen so that subtracting the attributed D-1 noise gives back the
//! generator's clean cost.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{compute_error_metrics, write_dataset, IngestError, StationWeekRecord};
use crate::preprocess::{d1_utilization, noise_factors, DEFAULT_D1_CAP};
use crate::week::Week;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] IngestError),
}

fn default_start_week() -> Week {
    Week::from_iso(2024, 1).expect("valid week")
}

fn default_base_demand() -> f64 {
    10_000.0
}

fn default_d1_noise() -> f64 {
    0.02
}

fn default_d1_cap() -> f64 {
    DEFAULT_D1_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_stations: usize,
    pub n_weeks: usize,
    /// Heaviness cost per package at week 0.
    pub cpp_h_true: f64,
    /// Lightness cost per package at week 0.
    pub cpp_l_true: f64,
    /// Linear change per week of the heaviness rate.
    #[serde(default)]
    pub cpp_h_drift: f64,
    #[serde(default)]
    pub cpp_l_drift: f64,
    /// Per-station relative jitter of both rates, uniform in `±spread`.
    #[serde(default)]
    pub cpp_spread: f64,
    /// Forecast error standard deviation, packages.
    pub sigma_true: f64,
    /// Mean forecast error `E[o - f]`, packages.
    #[serde(default)]
    pub calib_bias: f64,
    /// Probability that the D-1 revision moves towards the observed demand.
    #[serde(default)]
    pub d1_skill: f64,
    /// Systematic D-1 revision, fraction of the WK-1 forecast.
    #[serde(default)]
    pub d1_bias: f64,
    /// Spread of uninformed D-1 revisions, fraction of the WK-1 forecast.
    #[serde(default = "default_d1_noise")]
    pub d1_noise: f64,
    #[serde(default = "default_d1_cap")]
    pub d1_cap: f64,
    /// Relative noise on weekly clean costs.
    #[serde(default)]
    pub cost_noise: f64,
    #[serde(default = "default_base_demand")]
    pub base_demand: f64,
    #[serde(default = "default_start_week")]
    pub start_week: Week,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_stations: 10,
            n_weeks: 104,
            cpp_h_true: 5.0,
            cpp_l_true: 1.0,
            cpp_h_drift: 0.0,
            cpp_l_drift: 0.0,
            cpp_spread: 0.0,
            sigma_true: 500.0,
            calib_bias: 0.0,
            d1_skill: 0.5,
            d1_bias: 0.0,
            d1_noise: default_d1_noise(),
            d1_cap: DEFAULT_D1_CAP,
            cost_noise: 0.0,
            base_demand: default_base_demand(),
            start_week: default_start_week(),
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    /// Fleet whose heaviness rate drifts upward while the D-1 forecast runs
    /// systematically high. Recentness weighting tracks the drift; noise
    /// reduction removes the cost distortion from the D-1 bias.
    pub fn drift_benchmark(seed: u64) -> Self {
        Self {
            n_stations: 40,
            n_weeks: 104,
            cpp_h_true: 1.0,
            cpp_l_true: 2.0,
            cpp_h_drift: 0.06,
            cpp_l_drift: 0.0,
            cpp_spread: 0.2,
            sigma_true: 400.0,
            calib_bias: 0.0,
            d1_skill: 0.8,
            d1_bias: 0.06,
            d1_noise: 0.01,
            cost_noise: 0.05,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let finite = [
            self.cpp_h_true,
            self.cpp_l_true,
            self.cpp_h_drift,
            self.cpp_l_drift,
            self.cpp_spread,
            self.sigma_true,
            self.calib_bias,
            self.d1_skill,
            self.d1_bias,
            self.d1_noise,
            self.d1_cap,
            self.cost_noise,
            self.base_demand,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all numeric fields must be finite");
        }
        if self.n_stations == 0 || self.n_weeks == 0 {
            return bad("n_stations and n_weeks must be positive");
        }
        if self.cpp_h_true <= 0.0 || self.cpp_l_true <= 0.0 {
            return bad("cost rates must be > 0");
        }
        if !(0.0..1.0).contains(&self.cpp_spread) {
            return bad("cpp_spread must be in [0, 1)");
        }
        if self.sigma_true <= 0.0 {
            return bad("sigma_true must be > 0");
        }
        if !(0.0..=1.0).contains(&self.d1_skill) {
            return bad("d1_skill must be in [0, 1]");
        }
        if self.d1_noise < 0.0 || self.cost_noise < 0.0 {
            return bad("noise levels must be >= 0");
        }
        if !(0.0..1.0).contains(&self.d1_cap) {
            return bad("d1_cap must be in [0, 1)");
        }
        if self.base_demand <= 0.0 {
            return bad("base_demand must be > 0");
        }
        Ok(())
    }
}

/// Generator-side truth for one station-week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub week: Week,
    pub cpp_h: f64,
    pub cpp_l: f64,
    pub cost_h_clean: f64,
    pub cost_l_clean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticDataset {
    /// Sorted by `(station_id, week)`.
    pub records: Vec<StationWeekRecord>,
    /// Aligned with `records`.
    pub truth: Vec<GroundTruth>,
}

impl SyntheticDataset {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), SynthError> {
        Ok(write_dataset(sink, &self.records)?)
    }

    /// `station_id,week,cpp_h,cpp_l,cost_h_clean,cost_l_clean`, aligned with
    /// the records.
    pub fn write_truth_csv<W: Write>(&self, sink: W) -> Result<(), SynthError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["station_id", "week", "cpp_h", "cpp_l", "cost_h_clean", "cost_l_clean"])
            .map_err(IngestError::from)?;
        for (r, t) in self.records.iter().zip(&self.truth) {
            w.write_record([
                r.station_id.clone(),
                t.week.to_string(),
                t.cpp_h.to_string(),
                t.cpp_l.to_string(),
                t.cost_h_clean.to_string(),
                t.cost_l_clean.to_string(),
            ])
            .map_err(IngestError::from)?;
        }
        w.flush().map_err(|e| IngestError::from(csv::Error::from(e)))?;
        Ok(())
    }
}

pub fn station_id(index: usize) -> String {
    format!("S{index:04}")
}

pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let stations: Vec<_> = (0..spec.n_stations).into_par_iter().map(|i| generate_station(spec, i)).collect();
    let mut out = SyntheticDataset::default();
    for (records, truth) in stations {
        out.records.extend(records);
        out.truth.extend(truth);
    }
    Ok(out)
}

fn generate_station(spec: &ScenarioSpec, index: usize) -> (Vec<StationWeekRecord>, Vec<GroundTruth>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let id = station_id(index);
    let mut jitter = || if spec.cpp_spread > 0.0 { 1.0 + rng.gen_range(-spec.cpp_spread..spec.cpp_spread) } else { 1.0 };
    let (scale_h, scale_l) = (jitter(), jitter());
    let level = spec.base_demand * rng.gen_range(0.5..1.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut records = Vec::with_capacity(spec.n_weeks);
    let mut truth = Vec::with_capacity(spec.n_weeks);
    for t in 0..spec.n_weeks {
        let week = spec.start_week.offset(t as i32);
        let season = 1.0 + 0.1 * (std::f64::consts::TAU * t as f64 / 52.0 + phase).sin();
        let f = (level * season).round().max(1.0);
        let e: f64 = spec.calib_bias + spec.sigma_true * std_normal.sample(&mut rng);
        let o = (f + e).round().max(0.0);

        let informed = rng.gen_bool(spec.d1_skill);
        let eps = (o - f) / f;
        let phi = if informed {
            eps * rng.gen_range(0.0..1.5)
        } else {
            spec.d1_noise * std_normal.sample(&mut rng)
        } + spec.d1_bias;
        let f2 = (f * (1.0 + phi)).round().max(1.0);

        let week_offset = t as f64;
        let cpp_h = (scale_h * spec.cpp_h_true + spec.cpp_h_drift * week_offset).max(1e-6);
        let cpp_l = (scale_l * spec.cpp_l_true + spec.cpp_l_drift * week_offset).max(1e-6);
        let noise = (1.0 + spec.cost_noise * std_normal.sample(&mut rng)).max(0.0);

        let mut record = StationWeekRecord {
            station_id: id.clone(),
            week,
            observed_demand: o,
            wk1_forecast: f,
            d1_forecast: f2,
            cost_h_raw: 0.0,
            cost_l_raw: 0.0,
        };
        let m = compute_error_metrics(&record);
        let (clean_h, clean_l) = if m.err_pkg > 0.0 {
            (cpp_h * m.err_pkg * noise, 0.0)
        } else if m.err_pkg < 0.0 {
            (0.0, cpp_l * -m.err_pkg * noise)
        } else {
            (0.0, 0.0)
        };
        // Invert clean = raw - factor * raw using the exact factors the
        // preprocessor will derive from the stored record.
        let u = d1_utilization(m.err_pct, m.d1_delta_pct);
        let (fh, fl) = noise_factors(m.err_pct, m.d1_delta_pct, u, spec.d1_cap);
        record.cost_h_raw = clean_h / (1.0 - fh);
        record.cost_l_raw = clean_l / (1.0 - fl);

        truth.push(GroundTruth { week, cpp_h, cpp_l, cost_h_clean: clean_h, cost_l_clean: clean_l });
        records.push(record);
    }
    (records, truth)
}
