use std::fs;

use msims_core::sim::TransportConfig;
use msims_core::{run_scenario, MetricsReport, Scenario, ScenarioKind};
use msims_testbed::{calls_csv, emit, summary};
use serde_json::Value;

fn small() -> Scenario {
    Scenario {
        name: ScenarioKind::Custom,
        rate_per_min: 6.0,
        hold_ms: 20_000,
        duration_ms: 60_000,
        subscriber_pairs: 3,
        transport: TransportConfig { jitter_ms: 0, ..TransportConfig::default() },
        ..Scenario::baseline()
    }
}

#[test]
fn empty_report_has_header_only_and_zero_counters() {
    let r = MetricsReport::default();
    assert_eq!(calls_csv(&r), b"index,subscriber,t_invite_ms,outcome,latency_ms,pouch\n");
    let j = summary(&r, &Scenario::baseline());
    for (k, v) in j["counters"].as_object().unwrap() {
        assert_eq!(v.as_u64(), Some(0), "{k}");
    }
    assert_eq!(j["latency_ms"]["p50"], Value::Null);
}

#[test]
fn first_established_call_has_a_latency() {
    let r = run_scenario(&small(), 0).unwrap();
    let csv = String::from_utf8(calls_csv(&r)).unwrap();
    let mut lines = csv.lines().skip(1);
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[3], "established");
    assert_eq!(first[4].parse::<u64>().unwrap(), r.records[0].latency_ms.unwrap());
    assert!(first[5].ends_with(".local"));
    let (caller, callee) = first[1].split_once("->").unwrap();
    assert_eq!(caller, r.records[0].caller.to_string());
    assert_eq!(callee, r.records[0].callee.to_string());
    assert_eq!(csv.lines().count(), 1 + r.records.len());
}

#[test]
fn rows_match_records() {
    let mut s = Scenario::failure();
    s.duration_ms = 1_500_000;
    let r = run_scenario(&s, 3).unwrap();
    let bytes = calls_csv(&r);
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), r.records.len());
    for (row, rec) in rows.iter().zip(&r.records) {
        assert_eq!(row[0].parse::<u64>().unwrap(), rec.index);
        assert_eq!(row[2].parse::<u64>().unwrap(), rec.t_invite);
        assert_eq!(&row[3], rec.outcome.unwrap().as_str());
        assert_eq!(row[4].is_empty(), rec.latency_ms.is_none());
    }
    assert!(rows.iter().any(|r| &r[3] == "dropped-failure"));
}

#[test]
fn summary_echoes_config_and_counters() {
    let s = small();
    let r = run_scenario(&s, 5).unwrap();
    let j = summary(&r, &s);
    assert_eq!(j["seed"], 5);
    assert_eq!(j["scenario"]["name"], "custom");
    assert_eq!(j["scenario"]["pouch"]["capacity_sessions"], 20);
    assert_eq!(j["counters"]["established"].as_u64(), Some(r.counters.established));
    assert_eq!(j["trace_digest"].as_str().unwrap(), format!("{:016x}", r.trace_digest));
    assert_eq!(j["windows"].as_array().unwrap().len(), 1);
}

#[test]
fn emit_writes_trace_only_when_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let s = small();
    let plain = emit(&run_scenario(&s, 1).unwrap(), &s, &dir.path().join("a")).unwrap();
    assert!(plain.trace.is_none());
    assert!(!dir.path().join("a/trace.tsv").exists());

    let traced_s = Scenario { trace: true, ..s };
    let traced = emit(&run_scenario(&traced_s, 1).unwrap(), &traced_s, &dir.path().join("b")).unwrap();
    let tsv = fs::read_to_string(traced.trace.unwrap()).unwrap();
    assert!(tsv.starts_with("time\tkind\tsrc\tdst\tdetail\n"));
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 5));
    assert_eq!(fs::read(&plain.calls).unwrap(), fs::read(&traced.calls).unwrap());
    let j: Value = serde_json::from_str(&fs::read_to_string(&traced.summary).unwrap()).unwrap();
    assert!(j["counters"]["arrivals"].as_u64().unwrap() > 0);
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = emit(&MetricsReport::default(), &Scenario::baseline(), &blocker.join("out")).unwrap_err();
    assert!(matches!(err, msims_testbed::HarnessError::Io { .. }));
}
