//! Per-call records and run-level counters.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autoscaler::{BusyRecord, ScaleReason};
use crate::sim::{Millis, TraceLine};
use crate::sip::SipUri;
use crate::stats::percentile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CallOutcome {
    Established,
    BusyCapacity,
    BusyMedia,
    PolicyRejected,
    DroppedFailure,
}

impl CallOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            CallOutcome::Established => "established",
            CallOutcome::BusyCapacity => "busy-capacity",
            CallOutcome::BusyMedia => "busy-media",
            CallOutcome::PolicyRejected => "policy-rejected",
            CallOutcome::DroppedFailure => "dropped-failure",
        }
    }

    pub fn is_busy(self) -> bool {
        matches!(self, CallOutcome::BusyCapacity | CallOutcome::BusyMedia)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CallRecord {
    /// Placement order, starting at 1.
    pub index: u64,
    pub call_id: String,
    pub caller: SipUri,
    pub callee: SipUri,
    pub t_invite: Millis,
    /// `None` only if the run ended before the call resolved.
    pub outcome: Option<CallOutcome>,
    /// Present iff the outcome is `Established`.
    pub latency_ms: Option<Millis>,
    pub pouch: Option<String>,
    /// Calls in the system (establishing or established) when this one arrived.
    pub concurrency_at_arrival: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Counters {
    pub arrivals: u64,
    pub throttled: u64,
    pub placed: u64,
    pub established: u64,
    pub busy_capacity: u64,
    pub busy_media: u64,
    pub policy_rejected: u64,
    pub dropped_failure: u64,
    pub unfinished: u64,
    pub busy_signals_capacity: u64,
    pub busy_signals_media: u64,
    pub busy_signals_failure: u64,
    pub central_queries: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub provisioning_events: u64,
    pub retirements: u64,
    pub failures: u64,
    pub nodeset_version: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub peak_concurrency: u32,
}

impl Counters {
    pub fn cache_hit_ratio(&self) -> f64 {
        let lookups = self.cache_hits + self.cache_misses;
        if lookups == 0 {
            0.0
        } else {
            self.cache_hits as f64 / lookups as f64
        }
    }

    /// Busy drops over calls that were actually offered to the system.
    pub fn busy_drop_rate(&self) -> f64 {
        if self.placed == 0 {
            0.0
        } else {
            (self.busy_capacity + self.busy_media) as f64 / self.placed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct WindowStats {
    pub start: Millis,
    pub end: Millis,
    pub established: u64,
    pub p50_ms: Option<Millis>,
    pub p95_ms: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScaleKind {
    Provision,
    Active,
    Drain,
    Retire,
    Fail,
}

impl ScaleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleKind::Provision => "provision",
            ScaleKind::Active => "active",
            ScaleKind::Drain => "drain",
            ScaleKind::Retire => "retire",
            ScaleKind::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ScaleEvent {
    pub at: Millis,
    pub kind: ScaleKind,
    pub host: String,
    pub reason: Option<ScaleReason>,
    pub nodeset_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct FailureRecord {
    pub at: Millis,
    pub host: String,
    pub dropped_sessions: u64,
    pub affected: Vec<SipUri>,
    /// First establishment of a call placed by an affected subscriber after the failure.
    pub recovered_at: Option<Millis>,
}

impl FailureRecord {
    pub fn time_to_recovery(&self) -> Option<Millis> {
        self.recovered_at.map(|t| t - self.at)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub seed: u64,
    pub horizon_ms: Millis,
    pub end_ms: Millis,
    pub records: Vec<CallRecord>,
    pub counters: Counters,
    pub windows: Vec<WindowStats>,
    pub mttr_samples: Vec<Millis>,
    pub failures: Vec<FailureRecord>,
    pub scale_events: Vec<ScaleEvent>,
    pub busy_log: Vec<BusyRecord>,
    /// (time, calls in system) at every change.
    pub concurrency: Vec<(Millis, u32)>,
    pub central_queries_by_subscriber: BTreeMap<SipUri, u64>,
    pub rendezvous_versions: Vec<u64>,
    pub trace_digest: u64,
    pub trace: Option<Vec<TraceLine>>,
}

impl MetricsReport {
    pub fn established_latencies(&self) -> impl Iterator<Item = (&CallRecord, Millis)> {
        self.records.iter().filter_map(|r| r.latency_ms.map(|l| (r, l)))
    }

    pub fn mean_ttr(&self) -> Option<f64> {
        if self.mttr_samples.is_empty() {
            None
        } else {
            Some(self.mttr_samples.iter().sum::<u64>() as f64 / self.mttr_samples.len() as f64)
        }
    }

    /// Time-weighted mean number of calls in the system over `[from, to)`.
    pub fn mean_concurrency(&self, from: Millis, to: Millis) -> f64 {
        time_weighted_mean(&self.concurrency, from, to)
    }

    /// Sum of outcomes plus throttled arrivals; equals `counters.arrivals` when the run reconciles.
    pub fn reconciled_arrivals(&self) -> u64 {
        let c = &self.counters;
        c.established + c.busy_capacity + c.busy_media + c.policy_rejected + c.dropped_failure + c.unfinished + c.throttled
    }
}

pub fn time_weighted_mean(series: &[(Millis, u32)], from: Millis, to: Millis) -> f64 {
    if to <= from {
        return 0.0;
    }
    let mut level = 0u32;
    let mut acc = 0u128;
    let mut cursor = from;
    for &(t, v) in series {
        if t <= from {
            level = v;
            continue;
        }
        if t >= to {
            break;
        }
        acc += (t - cursor) as u128 * level as u128;
        cursor = t;
        level = v;
    }
    acc += (to - cursor) as u128 * level as u128;
    acc as f64 / (to - from) as f64
}

/// Latency percentiles of established calls bucketed by invite time.
pub fn window_stats(records: &[CallRecord], window_ms: Millis, horizon: Millis) -> Vec<WindowStats> {
    let window_ms = window_ms.max(1);
    let n = horizon.div_ceil(window_ms).max(1);
    let mut buckets: Vec<Vec<Millis>> = alloc::vec![Vec::new(); n as usize];
    for r in records {
        if let Some(l) = r.latency_ms {
            let i = ((r.t_invite / window_ms) as usize).min(buckets.len() - 1);
            buckets[i].push(l);
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(i, mut v)| {
            v.sort_unstable();
            let start = i as Millis * window_ms;
            WindowStats {
                start,
                end: start + window_ms,
                established: v.len() as u64,
                p50_ms: (!v.is_empty()).then(|| percentile_sorted(&v, 50)),
                p95_ms: (!v.is_empty()).then(|| percentile_sorted(&v, 95)),
            }
        })
        .collect()
}
