//! Fixtures shared by the benchmarks.

use asymlift_core::{generate, CostProfile, ScenarioSpec, StationWeekRecord};

/// Profiles spanning cost ratios from 1:50 to 50:1 and four decades of σ.
pub fn profile_grid() -> Vec<CostProfile> {
    let ratios = [1.0 / 50.0, 0.2, 1.0, 5.0, 50.0];
    let sigmas = [1.0, 40.0, 500.0, 10_000.0];
    ratios
        .iter()
        .flat_map(|&r| sigmas.iter().map(move |&s| CostProfile::new("B", r, 1.0, s)))
        .collect()
}

/// A fleet with a 5:1 heaviness-to-lightness cost ratio.
pub fn fleet(n_stations: usize, n_weeks: usize, seed: u64) -> Vec<StationWeekRecord> {
    let spec = ScenarioSpec { n_stations, n_weeks, cpp_h_true: 5.0, cpp_l_true: 1.0, seed, ..Default::default() };
    generate(&spec).expect("valid bench spec").records
}
