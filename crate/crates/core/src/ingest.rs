//! Station-week observation files: parsing, validation and error metrics.
//!
//! Input is UTF-8 CSV with a header row. The canonical columns are
//! `station_id,week,observed_demand,wk1_forecast,d1_forecast,cost_h_raw,cost_l_raw`;
//! a [`ColumnSchema`] remaps them when a file uses other names.
//!
//! Invalid rows are skipped and reported as [`RowDiagnostic`]s instead of
//! failing the whole file. Only structural problems (unreadable input, a
//! missing column) abort parsing.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::week::Week;

/// One observation for one station and one week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationWeekRecord {
    pub station_id: String,
    pub week: Week,
    /// Packages actually delivered (`o`).
    pub observed_demand: f64,
    /// Week-ahead base forecast (`f`).
    pub wk1_forecast: f64,
    /// Day-ahead forecast (`f2`).
    pub d1_forecast: f64,
    /// Raw heaviness regret cost.
    pub cost_h_raw: f64,
    /// Raw lightness regret cost.
    pub cost_l_raw: f64,
}

impl StationWeekRecord {
    pub fn error_metrics(&self) -> ErrorMetrics {
        compute_error_metrics(self)
    }

    fn validate(&self) -> Result<(), (RowErrorKind, String)> {
        let values = [
            ("observed_demand", self.observed_demand),
            ("wk1_forecast", self.wk1_forecast),
            ("d1_forecast", self.d1_forecast),
            ("cost_h_raw", self.cost_h_raw),
            ("cost_l_raw", self.cost_l_raw),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                return Err((RowErrorKind::MalformedRow, format!("{name} is not finite")));
            }
        }
        if self.wk1_forecast <= 0.0 {
            return Err((
                RowErrorKind::NonPositiveForecast,
                format!("wk1_forecast must be > 0, got {}", self.wk1_forecast),
            ));
        }
        if self.d1_forecast <= 0.0 {
            return Err((
                RowErrorKind::NonPositiveForecast,
                format!("d1_forecast must be > 0, got {}", self.d1_forecast),
            ));
        }
        for (name, v) in [
            ("observed_demand", self.observed_demand),
            ("cost_h_raw", self.cost_h_raw),
            ("cost_l_raw", self.cost_l_raw),
        ] {
            if v < 0.0 {
                return Err((RowErrorKind::NegativeValue, format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Forecast errors derived from a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// `(o - f) / f`
    pub err_pct: f64,
    /// `o - f`, in packages.
    pub err_pkg: f64,
    /// `(f2 - f) / f`
    pub d1_delta_pct: f64,
}

pub fn compute_error_metrics(r: &StationWeekRecord) -> ErrorMetrics {
    let err_pkg = r.observed_demand - r.wk1_forecast;
    ErrorMetrics {
        err_pct: err_pkg / r.wk1_forecast,
        err_pkg,
        d1_delta_pct: (r.d1_forecast - r.wk1_forecast) / r.wk1_forecast,
    }
}

/// Maps canonical field names to the header names used in a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub station_id: String,
    pub week: String,
    pub observed_demand: String,
    pub wk1_forecast: String,
    pub d1_forecast: String,
    pub cost_h_raw: String,
    pub cost_l_raw: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            station_id: "station_id".into(),
            week: "week".into(),
            observed_demand: "observed_demand".into(),
            wk1_forecast: "wk1_forecast".into(),
            d1_forecast: "d1_forecast".into(),
            cost_h_raw: "cost_h_raw".into(),
            cost_l_raw: "cost_l_raw".into(),
        }
    }
}

impl ColumnSchema {
    pub fn from_json(s: &str) -> Result<Self, IngestError> {
        serde_json::from_str(s).map_err(|e| IngestError::Schema(e.to_string()))
    }

    fn columns(&self) -> [&str; 7] {
        [
            &self.station_id,
            &self.week,
            &self.observed_demand,
            &self.wk1_forecast,
            &self.d1_forecast,
            &self.cost_h_raw,
            &self.cost_l_raw,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowErrorKind {
    /// A field failed to parse or is not finite.
    MalformedRow,
    /// `(station_id, week)` already seen earlier in the file.
    DuplicateKey,
    NonPositiveForecast,
    /// Negative demand or cost.
    NegativeValue,
}

/// Why a data row was rejected. `row` is the 1-based data row (header excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub kind: RowErrorKind,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("invalid column schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Default)]
pub struct ParsedDataset {
    /// Sorted by `(station_id, week)`.
    pub records: Vec<StationWeekRecord>,
    pub diagnostics: Vec<RowDiagnostic>,
}

pub fn parse_dataset<R: Read>(source: R, schema: &ColumnSchema) -> Result<ParsedDataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }

    let mut out = ParsedDataset::default();
    let mut seen: HashSet<(String, Week)> = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let record = match parse_row(&row, &idx) {
            Ok(r) => r,
            Err(message) => {
                out.diagnostics.push(RowDiagnostic { row: row_no, kind: RowErrorKind::MalformedRow, message });
                continue;
            }
        };
        if let Err((kind, message)) = record.validate() {
            out.diagnostics.push(RowDiagnostic { row: row_no, kind, message });
            continue;
        }
        if !seen.insert((record.station_id.clone(), record.week)) {
            out.diagnostics.push(RowDiagnostic {
                row: row_no,
                kind: RowErrorKind::DuplicateKey,
                message: format!("duplicate key ({}, {})", record.station_id, record.week),
            });
            continue;
        }
        out.records.push(record);
    }
    out.records.sort_by(|a, b| a.station_id.cmp(&b.station_id).then(a.week.cmp(&b.week)));
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, idx: &[usize; 7]) -> Result<StationWeekRecord, String> {
    let field = |i: usize| row.get(idx[i]).ok_or_else(|| format!("row has {} fields", row.len()));
    let number = |i: usize, name: &str| -> Result<f64, String> {
        let raw = field(i)?;
        raw.parse::<f64>().map_err(|_| format!("{name}: cannot parse {raw:?} as a number"))
    };
    let station_id = field(0)?.to_string();
    if station_id.is_empty() {
        return Err("station_id is empty".into());
    }
    let week = field(1)?.parse::<Week>().map_err(|e| e.to_string())?;
    Ok(StationWeekRecord {
        station_id,
        week,
        observed_demand: number(2, "observed_demand")?,
        wk1_forecast: number(3, "wk1_forecast")?,
        d1_forecast: number(4, "d1_forecast")?,
        cost_h_raw: number(5, "cost_h_raw")?,
        cost_l_raw: number(6, "cost_l_raw")?,
    })
}

/// Writes records with the canonical header. Floats use the shortest
/// representation that round-trips, so re-parsing is bit-exact.
pub fn write_dataset<W: Write>(sink: W, records: &[StationWeekRecord]) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(ColumnSchema::default().columns())?;
    for r in records {
        writer.write_record([
            r.station_id.clone(),
            r.week.to_string(),
            r.observed_demand.to_string(),
            r.wk1_forecast.to_string(),
            r.d1_forecast.to_string(),
            r.cost_h_raw.to_string(),
            r.cost_l_raw.to_string(),
        ])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Splits a sorted record stream into per-station, week-ordered series.
pub fn group_by_station(records: &[StationWeekRecord]) -> BTreeMap<String, Vec<StationWeekRecord>> {
    let mut map: BTreeMap<String, Vec<StationWeekRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.station_id.clone()).or_default().push(r.clone());
    }
    for series in map.values_mut() {
        series.sort_by_key(|r| r.week);
    }
    map
}
