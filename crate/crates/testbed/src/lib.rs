//! Scenario runner for `msims-core`.
//!
//! Loads scenarios from TOML on top of the built-in presets, runs them, and writes
//! `calls.csv`, `summary.json` and optionally `trace.tsv`. The `sweep` module runs
//! the headroom trade-off over many seeds in parallel.

pub mod cli;
pub mod config;
pub mod emit;
pub mod error;
pub mod stats;
pub mod sweep;

pub use config::{load_scenario, scenario_from_toml};
pub use emit::{calls_csv, emit, summary, Emitted};
pub use error::HarnessError;
pub use stats::{pearson, spearman};
pub use sweep::{run_sweep, summarize, SweepRow, SweepSummary};
