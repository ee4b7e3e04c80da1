//! Report files: `calls.csv`, `summary.json` and `trace.tsv`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use msims_core::stats::percentile;
use msims_core::{MetricsReport, Scenario};
use serde_json::{json, Value};

use crate::HarnessError;

pub const CALLS_HEADER: [&str; 6] = ["index", "subscriber", "t_invite_ms", "outcome", "latency_ms", "pouch"];
pub const TRACE_HEADER: &str = "time\tkind\tsrc\tdst\tdetail";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub calls: PathBuf,
    pub summary: PathBuf,
    pub trace: Option<PathBuf>,
}

pub fn write_calls<W: Write>(report: &MetricsReport, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CALLS_HEADER)?;
    for r in &report.records {
        w.write_record([
            r.index.to_string(),
            format!("{}->{}", r.caller, r.callee),
            r.t_invite.to_string(),
            r.outcome.map_or("unfinished", |o| o.as_str()).to_string(),
            r.latency_ms.map(|l| l.to_string()).unwrap_or_default(),
            r.pouch.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io("calls.csv", e))?;
    Ok(())
}

pub fn calls_csv(report: &MetricsReport) -> Vec<u8> {
    let mut buf = Vec::new();
    write_calls(report, &mut buf).expect("writing to memory");
    buf
}

pub fn write_trace<W: Write>(report: &MetricsReport, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for line in report.trace.iter().flatten() {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn summary(report: &MetricsReport, scenario: &Scenario) -> Value {
    let c = &report.counters;
    let latencies: Vec<u64> = report.established_latencies().map(|(_, l)| l).collect();
    json!({
        "seed": report.seed,
        "scenario": scenario,
        "horizon_ms": report.horizon_ms,
        "end_ms": report.end_ms,
        "counters": c,
        "ratios": {
            "cache_hit_ratio": c.cache_hit_ratio(),
            "busy_drop_rate": c.busy_drop_rate(),
        },
        "latency_ms": {
            "count": latencies.len(),
            "p50": percentile(&latencies, 50),
            "p95": percentile(&latencies, 95),
            "p99": percentile(&latencies, 99),
            "max": latencies.iter().max(),
        },
        "mean_concurrency": report.mean_concurrency(0, report.horizon_ms),
        "windows": report.windows,
        "mttr_ms": {
            "samples": report.mttr_samples,
            "mean": report.mean_ttr(),
        },
        "failures": report.failures,
        "scale_events": report.scale_events,
        "rendezvous_versions": report.rendezvous_versions,
        "trace_digest": format!("{:016x}", report.trace_digest),
    })
}

/// Writes the report files into `out_dir`, creating it if needed.
pub fn emit(report: &MetricsReport, scenario: &Scenario, out_dir: &Path) -> Result<Emitted, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let calls = out_dir.join("calls.csv");
    fs::write(&calls, calls_csv(report)).map_err(|e| HarnessError::io(&calls, e))?;

    let summary_path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary(report, scenario))?;
    text.push('\n');
    fs::write(&summary_path, text).map_err(|e| HarnessError::io(&summary_path, e))?;

    let trace = match report.trace {
        Some(_) => {
            let path = out_dir.join("trace.tsv");
            let file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
            let mut w = io::BufWriter::new(file);
            write_trace(report, &mut w).and_then(|_| w.flush()).map_err(|e| HarnessError::io(&path, e))?;
            Some(path)
        }
        None => None,
    };
    Ok(Emitted { calls, summary: summary_path, trace })
}
