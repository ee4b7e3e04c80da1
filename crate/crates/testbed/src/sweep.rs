//! Headroom trade-off sweep over `n_extra` and seeds.

use std::fs;
use std::path::Path;

use msims_core::metrics::{time_weighted_mean, ScaleKind};
use msims_core::stats::percentile;
use msims_core::{run_scenario, ConfigError, MetricsReport, Scenario};
use rayon::prelude::*;
use serde_json::json;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_extra: u32,
    pub seed: u64,
    pub placed: u64,
    pub busy: u64,
    pub busy_drop_rate: f64,
    pub mean_allocated: f64,
    pub p95_latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub n_extra: u32,
    pub runs: usize,
    pub mean_busy_drop_rate: f64,
    pub mean_allocated: f64,
}

/// Time-weighted number of allocated (provisioning, serving or draining) pouches over the horizon.
pub fn mean_allocated(report: &MetricsReport, initial: u32) -> f64 {
    let mut count = initial as i64;
    let mut series = vec![(0, initial)];
    for e in &report.scale_events {
        match e.kind {
            ScaleKind::Provision => count += 1,
            ScaleKind::Retire | ScaleKind::Fail => count -= 1,
            ScaleKind::Active | ScaleKind::Drain => continue,
        }
        series.push((e.at, count.max(0) as u32));
    }
    time_weighted_mean(&series, 0, report.horizon_ms)
}

/// Runs every (n_extra, seed) pair in parallel; rows come back in that order.
pub fn run_sweep(base: &Scenario, n_extras: &[u32], seeds: u64) -> Result<Vec<SweepRow>, ConfigError> {
    let jobs: Vec<(u32, u64)> = n_extras.iter().flat_map(|&n| (0..seeds).map(move |s| (n, s))).collect();
    jobs.into_par_iter()
        .map(|(n_extra, seed)| {
            let mut s = base.clone();
            s.autoscaler.n_extra = n_extra;
            let r = run_scenario(&s, seed)?;
            let lat: Vec<u64> = r.established_latencies().map(|(_, l)| l).collect();
            Ok(SweepRow {
                n_extra,
                seed,
                placed: r.counters.placed,
                busy: r.counters.busy_capacity + r.counters.busy_media,
                busy_drop_rate: r.counters.busy_drop_rate(),
                mean_allocated: mean_allocated(&r, s.pouch.initial_pouch_count),
                p95_latency_ms: percentile(&lat, 95),
            })
        })
        .collect()
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut levels: Vec<u32> = rows.iter().map(|r| r.n_extra).collect();
    levels.sort_unstable();
    levels.dedup();
    levels
        .into_iter()
        .map(|n_extra| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.n_extra == n_extra).collect();
            let k = group.len() as f64;
            SweepSummary {
                n_extra,
                runs: group.len(),
                mean_busy_drop_rate: group.iter().map(|r| r.busy_drop_rate).sum::<f64>() / k,
                mean_allocated: group.iter().map(|r| r.mean_allocated).sum::<f64>() / k,
            }
        })
        .collect()
}

/// Writes `sweep.csv` (one row per run) and `summary.json` (per-level means).
pub fn write_sweep(rows: &[SweepRow], base: &Scenario, out_dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n_extra", "seed", "placed", "busy", "busy_drop_rate", "mean_allocated", "p95_latency_ms"])?;
    for r in rows {
        w.write_record([
            r.n_extra.to_string(),
            r.seed.to_string(),
            r.placed.to_string(),
            r.busy.to_string(),
            format!("{:.6}", r.busy_drop_rate),
            format!("{:.4}", r.mean_allocated),
            r.p95_latency_ms.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let levels: Vec<_> = summarize(rows)
        .iter()
        .map(|s| {
            json!({
                "n_extra": s.n_extra,
                "runs": s.runs,
                "mean_busy_drop_rate": s.mean_busy_drop_rate,
                "mean_allocated": s.mean_allocated,
            })
        })
        .collect();
    let path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&json!({ "scenario": base, "levels": levels }))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}
