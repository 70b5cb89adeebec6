use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use asymlift_core::backtest::write_summary_csv;
use asymlift_core::feedback::{FeedbackConfig, FeedbackState, RealizedCpp, RealizedOutcome, UpdateStatus};
use asymlift_core::fsio::write_atomic;
use asymlift_core::ingest::group_by_station;
use asymlift_core::optimizer::{read_decisions_csv, read_profiles_json, write_decisions_csv, write_profiles_json, FleetEntry};
use asymlift_core::preprocess::{clean_record, preprocess_station};
use asymlift_core::{
    ablation_grid, estimate_profile, generate, parse_dataset, run_backtest, BacktestConfig, ColumnSchema, CostProfile,
    DecisionReason, Optimizer, ScenarioSpec, StationWeekRecord,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{AdjustArgs, BacktestArgs, FeedbackArgs, PreprocessArgs, SynthArgs};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(CliError::io(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(CliError::io(path))
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable report");
    out.push(b'\n');
    out
}

fn print_summary(value: serde_json::Value) {
    println!("{value}");
}

fn load_schema(args: &PreprocessArgs) -> Result<ColumnSchema> {
    match &args.schema {
        None => Ok(ColumnSchema::default()),
        Some(path) => {
            let text = String::from_utf8(read(path)?).map_err(|e| CliError::input(path, e))?;
            ColumnSchema::from_json(&text).map_err(|e| CliError::input(path, e))
        }
    }
}

/// Parses a dataset, reporting rejected rows as JSON lines on stderr.
fn load_records(path: &Path, schema: &ColumnSchema) -> Result<Vec<StationWeekRecord>> {
    let bytes = read(path)?;
    let parsed = parse_dataset(bytes.as_slice(), schema).map_err(|e| CliError::input(path, e))?;
    for d in &parsed.diagnostics {
        eprintln!("{}", json!({ "warning": "row_rejected", "path": path, "row": d.row, "kind": d.kind, "message": d.message }));
    }
    Ok(parsed.records)
}

fn validate(args: &PreprocessArgs) -> Result<()> {
    args.config().validate().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn adjust(args: &AdjustArgs) -> Result<()> {
    validate(&args.preprocess)?;
    let schema = load_schema(&args.preprocess)?;
    let records = load_records(&args.input, &schema)?;
    let config = args.preprocess.config();
    let stations = group_by_station(&records);

    let fleet: Vec<FleetEntry> = stations
        .par_iter()
        .map(|(id, series)| {
            let week = args.week.unwrap_or_else(|| series.last().expect("non-empty group").week.next());
            let series = preprocess_station(series, &config).map_err(|e| CliError::Compute(format!("{id}: {e}")))?;
            let profile = estimate_profile(id, &series.records, args.preprocess.min_obs);
            Ok(FleetEntry { station_id: id.clone(), week, profile })
        })
        .collect::<Result<_>>()?;

    let mut corrections = HashMap::new();
    if !args.ignore_state {
        for id in stations.keys() {
            let state = FeedbackState::load(&args.state.state_dir, id).map_err(|e| CliError::Compute(e.to_string()))?;
            corrections.insert(id.clone(), state.corrections());
        }
    }

    let optimizer = Optimizer::new(args.solver.config());
    let decisions = optimizer.solve_fleet(&fleet, &corrections);
    let profiles: Vec<CostProfile> = fleet.iter().filter_map(|e| e.profile.clone().ok()).collect();

    fs::create_dir_all(&args.out_dir).map_err(CliError::io(&args.out_dir))?;
    let decisions_path = args.out_dir.join("decisions.csv");
    let profiles_path = args.out_dir.join("profiles.json");
    let mut buf = Vec::new();
    write_decisions_csv(&mut buf, &decisions).map_err(|e| CliError::Compute(e.to_string()))?;
    write(&decisions_path, &buf)?;
    let mut buf = Vec::new();
    write_profiles_json(&mut buf, &profiles).map_err(|e| CliError::Compute(e.to_string()))?;
    buf.push(b'\n');
    write(&profiles_path, &buf)?;

    let optimized = decisions.iter().filter(|d| d.reason == DecisionReason::Optimized).count();
    print_summary(json!({
        "stations": decisions.len(),
        "optimized": optimized,
        "decisions": decisions_path,
        "profiles": profiles_path,
    }));
    Ok(())
}

pub fn feedback(args: &FeedbackArgs) -> Result<()> {
    validate(&args.preprocess)?;
    let schema = load_schema(&args.preprocess)?;
    let decisions = read_decisions_csv(read(&args.decisions)?.as_slice()).map_err(|e| CliError::input(&args.decisions, e))?;
    let actuals = load_records(&args.actuals, &schema)?;
    let profiles: HashMap<String, CostProfile> = match &args.profiles {
        None => HashMap::new(),
        Some(path) => read_profiles_json(read(path)?.as_slice())
            .map_err(|e| CliError::input(path, e))?
            .into_iter()
            .map(|p| (p.station_id.clone(), p))
            .collect(),
    };
    let actual_by_key: HashMap<_, _> = actuals.iter().map(|r| ((r.station_id.as_str(), r.week), r)).collect();

    let mut by_station: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for d in &decisions {
        by_station.entry(d.station_id.as_str()).or_default().push(d);
    }

    let optimizer = Optimizer::new(args.solver.config());
    let config = FeedbackConfig { window: args.state.feedback_window, k: args.preprocess.k };
    let cap = args.preprocess.d1_cap;
    let noise_reduction = !args.preprocess.no_noise_reduction;
    let (mut applied, mut repeated) = (0usize, 0usize);
    let mut missing = Vec::new();
    let mut failures = Vec::new();
    let mut outcomes: Vec<RealizedOutcome> = Vec::new();
    let mut saved = Vec::new();

    for (station, mut list) in by_station {
        list.sort_by_key(|d| d.week);
        let mut state = FeedbackState::load(&args.state.state_dir, station).map_err(|e| CliError::Compute(e.to_string()))?;
        let profile = profiles.get(station);
        let mut changed = false;
        for decision in list {
            let Some(actual) = actual_by_key.get(&(station, decision.week)) else {
                missing.push(json!({ "station_id": station, "week": decision.week }));
                continue;
            };
            let cleaned = clean_record(actual, noise_reduction, cap);
            let (ref_l, ref_h) = profile.map_or((0.0, 0.0), |p| (p.cpp_l_hat, p.cpp_h_hat));
            let realized = RealizedCpp::from_week(&cleaned, ref_l, ref_h);
            match state.apply_week(&optimizer, &config, decision, profile, &cleaned, realized) {
                Ok((outcome, UpdateStatus::Applied)) => {
                    applied += 1;
                    changed = true;
                    outcomes.push(outcome);
                }
                Ok((_, UpdateStatus::AlreadyApplied)) => repeated += 1,
                Err(e) => failures.push(json!({ "station_id": station, "week": decision.week, "error": e.to_string() })),
            }
        }
        // A fresh state with nothing applied is still written so the store is initialized.
        if changed || !state_exists(&args.state.state_dir, station) {
            saved.push(state.save(&args.state.state_dir).map_err(|e| CliError::Compute(e.to_string()))?);
        }
    }

    if let Some(path) = &args.out {
        write(path, &to_json(&outcomes))?;
    }
    print_summary(json!({
        "applied": applied,
        "already_applied": repeated,
        "missing_actuals": missing,
        "failures": failures,
        "states_written": saved,
    }));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Compute(format!("{} station-weeks could not be applied", failures.len())))
    }
}

fn state_exists(dir: &Path, station: &str) -> bool {
    asymlift_core::feedback::state_path(dir, station).exists()
}

pub fn backtest(args: &BacktestArgs) -> Result<()> {
    validate(&args.preprocess)?;
    let schema = load_schema(&args.preprocess)?;
    let records = load_records(&args.input, &schema)?;
    let config = BacktestConfig {
        preprocess: args.preprocess.config(),
        min_obs: args.preprocess.min_obs,
        solver: args.solver.config(),
        feedback_window: args.feedback_window,
        feedback: !args.no_feedback,
        min_train_weeks: args.min_train_weeks,
        policy: args.policy.into(),
        ..BacktestConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let reports = if args.grid {
        ablation_grid(&records, &config)
    } else {
        run_backtest(&records, &config).map(|r| vec![r])
    }
    .map_err(|e| CliError::Compute(e.to_string()))?;

    let body = if args.grid { to_json(&reports) } else { to_json(&reports[0]) };
    write(&args.out, &body)?;
    if let Some(path) = &args.csv {
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &reports).map_err(|e| CliError::Compute(e.to_string()))?;
        write(path, &buf)?;
    }
    let cells: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "time_weighting": r.cell.time_weighting,
                "noise_reduction": r.cell.noise_reduction,
                "total_cost_generated": r.total_cost_generated,
                "capture_ratio": r.capture_ratio,
                "cpp_mape": r.cpp_mape,
                "stations_evaluated": r.per_station.len(),
                "stations_excluded": r.excluded.len(),
            })
        })
        .collect();
    print_summary(json!({ "report": args.out, "cells": cells }));
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec: ScenarioSpec = serde_json::from_slice(&read(&args.spec)?).map_err(|e| CliError::input(&args.spec, e))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate(&spec).map_err(|e| CliError::input(&args.spec, e))?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(|e| CliError::Compute(e.to_string()))?;
    write(&args.out, &buf)?;
    let mut written: Vec<PathBuf> = vec![args.out.clone()];
    if let Some(path) = &args.truth {
        let mut buf = Vec::new();
        data.write_truth_csv(&mut buf).map_err(|e| CliError::Compute(e.to_string()))?;
        write(path, &buf)?;
        written.push(path.clone());
    }
    print_summary(json!({ "records": data.records.len(), "stations": spec.n_stations, "written": written }));
    Ok(())
}

