//! Command-line surface of the `msims` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use msims_core::stats::percentile;
use msims_core::{run_scenario, ScenarioKind};

use crate::{emit, load_scenario, sweep, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "msims", version, about = "Run micro-service IMS testbed scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write calls.csv, summary.json and optionally trace.tsv.
    Run {
        #[arg(long, value_parser = parse_kind)]
        scenario: ScenarioKind,
        /// TOML file overriding preset fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the scenario for every n_extra level and seed; writes sweep.csv and summary.json.
    Sweep {
        #[arg(long, value_parser = parse_kind)]
        scenario: ScenarioKind,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seeds 0..n.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3])]
        n_extra: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<ScenarioKind, String> {
    ScenarioKind::parse(s).ok_or_else(|| format!("unknown scenario `{s}` (baseline, autoscale, failure, tradeoff, custom)"))
}

/// Executes a command and returns the one-line status to print.
pub fn execute(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::Run { scenario, config, seed, out, trace } => {
            let mut s = load_scenario(scenario, config.as_deref())?;
            s.trace |= trace;
            let report = run_scenario(&s, seed)?;
            emit(&report, &s, &out)?;
            let lat: Vec<u64> = report.established_latencies().map(|(_, l)| l).collect();
            let c = &report.counters;
            Ok(format!(
                "{} seed {seed}: {} arrivals, {} established, {} busy, {} dropped, p50 {} ms -> {}",
                scenario.as_str(),
                c.arrivals,
                c.established,
                c.busy_capacity + c.busy_media,
                c.dropped_failure,
                percentile(&lat, 50).map_or("-".into(), |v| v.to_string()),
                out.display()
            ))
        }
        Command::Sweep { scenario, config, seeds, n_extra, out } => {
            let s = load_scenario(scenario, config.as_deref())?;
            let rows = sweep::run_sweep(&s, &n_extra, seeds)?;
            sweep::write_sweep(&rows, &s, &out)?;
            let means: Vec<String> = sweep::summarize(&rows)
                .iter()
                .map(|l| format!("n_extra {}: {:.4}", l.n_extra, l.mean_busy_drop_rate))
                .collect();
            Ok(format!("{} runs, mean busy-drop rate {} -> {}", rows.len(), means.join(", "), out.display()))
        }
    }
}
