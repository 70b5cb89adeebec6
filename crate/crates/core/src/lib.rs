//! Cost-asymmetric forecast adjustment.
//!
//! Turns station-level forecast-error and regret-cost history into an
//! additive forecast adjustment `Δ*` that minimizes expected regret cost,
//! and regulates that adjustment from realized savings.
//!
//! Pipeline: [`ingest`] → [`preprocess`] → [`cost_model`] → [`optimizer`]
//! → [`feedback`], with [`backtest`] replaying history through it and
//! [`synth`] generating fleets with known ground truth.

pub mod backtest;
pub mod cost_model;
pub mod feedback;
pub mod fsio;
pub mod ingest;
pub mod optimizer;
pub mod preprocess;
pub mod quadrature;
pub mod search;
pub mod synth;
pub mod week;

pub use backtest::{ablation_grid, run_backtest, AblationCell, BacktestConfig, BacktestReport, Policy};
pub use cost_model::{estimate_profile, regret_cost, CostModelError, CostProfile, Scenario};
pub use ingest::{parse_dataset, ColumnSchema, ErrorMetrics, ParsedDataset, StationWeekRecord};
pub use optimizer::{AdjustmentDecision, CorrectionTerms, DecisionReason, Optimizer, OptimizerError, SolverConfig};
pub use preprocess::{PreprocessConfig, WeightedRecord};
pub use feedback::{FeedbackConfig, FeedbackState, RealizedOutcome};
pub use quadrature::QuadConfig;
pub use synth::{generate, ScenarioSpec, SyntheticDataset};
pub use week::Week;
