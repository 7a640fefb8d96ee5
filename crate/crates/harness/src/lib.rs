pub mod cli;
pub mod config;
pub mod eval;
pub mod logs;
pub mod manifest;

pub use config::RunConfig;
pub use eval::{run_monte_carlo, summarize, summarize_worst_axis, EpisodeRecord, Pilot, ReportRow, ScenarioSpec};
