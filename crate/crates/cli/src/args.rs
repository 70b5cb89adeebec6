use std::path::PathBuf;

use asymlift_core::backtest::DEFAULT_MIN_TRAIN_WEEKS;
use asymlift_core::cost_model::DEFAULT_MIN_OBS;
use asymlift_core::feedback::DEFAULT_FEEDBACK_WINDOW;
use asymlift_core::optimizer::DEFAULT_TOL;
use asymlift_core::preprocess::{DEFAULT_D1_CAP, DEFAULT_K};
use asymlift_core::quadrature::{DEFAULT_ORDER, DEFAULT_PANELS, DEFAULT_WIDTH};
use asymlift_core::{Policy, PreprocessConfig, QuadConfig, SolverConfig, Week};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "asymlift", version, about = "Cost-optimal forecast adjustments from regret-cost history")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate station profiles and write next-week adjustments.
    Adjust(AdjustArgs),
    /// Score deployed adjustments against actuals and update station state.
    Feedback(FeedbackArgs),
    /// Walk-forward replay of the pipeline over a dataset.
    Backtest(BacktestArgs),
    /// Generate a synthetic fleet from a scenario spec.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Maximum recentness duplication factor.
    #[arg(long, default_value_t = DEFAULT_K, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: u32,
    /// Treat all weeks equally (forces k = 1).
    #[arg(long)]
    pub no_time_weighting: bool,
    /// Use raw costs without removing D-1 noise.
    #[arg(long)]
    pub no_noise_reduction: bool,
    /// Cap on the D-1 noise factor, as a fraction.
    #[arg(long, default_value_t = DEFAULT_D1_CAP, value_parser = parse_cap)]
    pub d1_cap: f64,
    /// Minimum observations per scenario for a cost-rate estimate.
    #[arg(long, default_value_t = DEFAULT_MIN_OBS, value_parser = at_least::<1>)]
    pub min_obs: usize,
    /// JSON file remapping input column names.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

impl PreprocessArgs {
    pub fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            k: self.k,
            time_weighting: !self.no_time_weighting,
            noise_reduction: !self.no_noise_reduction,
            d1_cap: self.d1_cap,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Integration half-width, in standard deviations.
    #[arg(long, default_value_t = DEFAULT_WIDTH, value_parser = parse_positive)]
    pub quad_width: f64,
    /// Quadrature panels on each side of zero.
    #[arg(long, default_value_t = DEFAULT_PANELS, value_parser = at_least::<1>)]
    pub quad_panels: usize,
    /// Search tolerance relative to sigma.
    #[arg(long, default_value_t = DEFAULT_TOL, value_parser = parse_positive)]
    pub tol: f64,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            quad: QuadConfig { width: self.quad_width, panels: self.quad_panels, order: DEFAULT_ORDER },
            tol: self.tol,
        }
    }
}

#[derive(Debug, Args)]
pub struct StateArgs {
    /// Directory of per-station feedback state.
    #[arg(long, env = "ASYMLIFT_STATE_DIR", default_value = "state")]
    pub state_dir: PathBuf,
    /// Rolling window of the feedback means, in weeks.
    #[arg(long, default_value_t = DEFAULT_FEEDBACK_WINDOW, value_parser = at_least::<1>)]
    pub feedback_window: usize,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Receives decisions.csv and profiles.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Week the adjustment applies to (default: week after each station's last record).
    #[arg(long)]
    pub week: Option<Week>,
    /// Decide without feedback corrections even if state exists.
    #[arg(long)]
    pub ignore_state: bool,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub state: StateArgs,
}

#[derive(Debug, Args)]
pub struct FeedbackArgs {
    /// Decisions CSV written by `adjust`.
    #[arg(long)]
    pub decisions: PathBuf,
    /// Station-week records for the decided weeks.
    #[arg(long)]
    pub actuals: PathBuf,
    /// Profiles JSON written by `adjust`, for the error decomposition.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Also write this run's realized outcomes as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub state: StateArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Model,
    PerfectForesight,
    NoAdjustment,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Model => Policy::Model,
            PolicyArg::PerfectForesight => Policy::PerfectForesight,
            PolicyArg::NoAdjustment => Policy::NoAdjustment,
        }
    }
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Report JSON: one report, or an array of four with `--grid`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run all four time-weighting × noise-reduction cells.
    #[arg(long)]
    pub grid: bool,
    /// Also write a one-row-per-cell summary CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_TRAIN_WEEKS, value_parser = at_least::<2>)]
    pub min_train_weeks: usize,
    /// Decide every week with zero corrections.
    #[arg(long)]
    pub no_feedback: bool,
    #[arg(long, value_enum, default_value = "model")]
    pub policy: PolicyArg,
    /// Rolling window of the feedback means, in weeks.
    #[arg(long, default_value_t = DEFAULT_FEEDBACK_WINDOW, value_parser = at_least::<1>)]
    pub feedback_window: usize,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generator's per-week truth as CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_cap(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must be in [0, 1)".into())
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("must be a positive number".into())
    }
}

fn at_least<const N: usize>(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v >= N {
        Ok(v)
    } else {
        Err(format!("must be >= {N}"))
    }
}
