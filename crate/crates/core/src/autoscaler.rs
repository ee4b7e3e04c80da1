//! The management unit: busy-signal reaction, headroom sweep, scale-down
//! and the QoS trigger.
//!
//! Decisions are returned as [`ScaleAction`]s; the caller carries them out
//! and reports back through [`ManagementUnit::pouch_active`] and friends, so
//! every node-set mutation goes through this type.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::hrw::{HrwError, NodeSet};
use crate::sim::Millis;
use crate::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BusyKind {
    Capacity,
    Media,
    NodeFailure,
}

impl BusyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusyKind::Capacity => "capacity",
            BusyKind::Media => "media",
            BusyKind::NodeFailure => "node-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BusySignal {
    pub at: Millis,
    pub pouch: String,
    pub call_id: String,
    pub kind: BusyKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AutoscalerConfig {
    /// Provision on busy signals.
    pub busy_scaling: bool,
    /// Run the periodic headroom sweep (scale-up to target and scale-down).
    pub headroom: bool,
    /// Provision a replacement when a pouch fails.
    pub replace_failed: bool,
    /// Let the QoS trigger add one pouch to the requirement.
    pub qos_trigger: bool,
    pub n_extra: u32,
    pub headroom_period_ms: Millis,
    pub low_util_threshold: f64,
    pub dwell_ms: Millis,
    pub latency_slo_ms: Millis,
    pub high_util_threshold: f64,
    /// Hard ceiling on Active plus Provisioning pouches.
    pub max_pouches: u32,
}

impl Default for AutoscalerConfig {
    fn default() -> Self {
        Self {
            busy_scaling: true,
            headroom: true,
            replace_failed: true,
            qos_trigger: true,
            n_extra: 1,
            headroom_period_ms: 10_000,
            low_util_threshold: 0.3,
            dwell_ms: 60_000,
            latency_slo_ms: 2_500,
            high_util_threshold: 0.9,
            max_pouches: 256,
        }
    }
}

impl AutoscalerConfig {
    /// Fixed capacity: no reaction of any kind.
    pub fn disabled() -> Self {
        Self { busy_scaling: false, headroom: false, replace_failed: false, qos_trigger: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadroomPolicy {
    pub n_extra: u32,
}

impl HeadroomPolicy {
    /// Pouches needed to hold `total_sessions` at `capacity` each.
    pub fn required(total_sessions: u64, capacity: u32) -> u32 {
        total_sessions.div_ceil(capacity.max(1) as u64) as u32
    }

    pub fn target(&self, required: u32) -> u32 {
        (required + self.n_extra).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleDownRule {
    pub low_util_threshold: f64,
    pub dwell_ms: Millis,
}

/// Inputs of the QoS trigger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QosInputs {
    pub mean_rtt_ms: f64,
    pub utilizations: Vec<f64>,
    pub recent_latencies: Vec<Millis>,
}

/// Recommends scale-up when p95 latency exceeds the SLO or any pouch runs hotter than `high_util`.
pub fn qos_trigger(inputs: &QosInputs, latency_slo_ms: Millis, high_util: f64) -> bool {
    let slow = percentile(&inputs.recent_latencies, 95).is_some_and(|p95| p95 > latency_slo_ms);
    let hot = inputs.utilizations.iter().any(|&u| u > high_util);
    slow || hot
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScaleReason {
    Busy,
    Headroom,
    Replace,
}

impl ScaleReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleReason::Busy => "busy",
            ScaleReason::Headroom => "headroom",
            ScaleReason::Replace => "replace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScaleAction {
    Provision { reason: ScaleReason },
    Drain { host: String },
}

/// A serving pouch as seen by the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PouchLoad {
    pub host: String,
    pub utilization: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolView {
    /// Active, non-draining pouches.
    pub serving: Vec<PouchLoad>,
    pub provisioning: u32,
    pub total_sessions: u64,
    pub capacity_sessions: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BusyRecord {
    pub signal: BusySignal,
    pub received_at: Millis,
    pub in_flight_at_receipt: bool,
    pub provisioned: bool,
}

#[derive(Debug, Clone)]
pub struct ManagementUnit {
    config: AutoscalerConfig,
    node_set: NodeSet,
    busy_log: Vec<BusyRecord>,
    low_since: BTreeMap<String, Millis>,
    qos_boost: bool,
}

impl ManagementUnit {
    pub fn new(config: AutoscalerConfig, node_set: NodeSet) -> Self {
        Self { config, node_set, busy_log: Vec::new(), low_since: BTreeMap::new(), qos_boost: false }
    }

    pub fn config(&self) -> &AutoscalerConfig {
        &self.config
    }

    pub fn node_set(&self) -> &NodeSet {
        &self.node_set
    }

    pub fn busy_log(&self) -> &[BusyRecord] {
        &self.busy_log
    }

    pub fn headroom_policy(&self) -> HeadroomPolicy {
        HeadroomPolicy { n_extra: self.config.n_extra }
    }

    pub fn scale_down_rule(&self) -> ScaleDownRule {
        ScaleDownRule { low_util_threshold: self.config.low_util_threshold, dwell_ms: self.config.dwell_ms }
    }

    /// Logs the signal; starts one provisioning when busy scaling is on and nothing is in flight.
    pub fn on_busy(&mut self, signal: BusySignal, now: Millis, provisioning_in_flight: u32, allocated: u32) -> Option<ScaleAction> {
        let in_flight = provisioning_in_flight > 0;
        let provision = self.config.busy_scaling && !in_flight && allocated < self.config.max_pouches;
        self.busy_log.push(BusyRecord { signal, received_at: now, in_flight_at_receipt: in_flight, provisioned: provision });
        provision.then_some(ScaleAction::Provision { reason: ScaleReason::Busy })
    }

    /// A pouch failed: drop it from the node set and maybe ask for a replacement.
    pub fn pouch_failed(&mut self, host: &str, allocated: u32) -> (Option<u64>, Option<ScaleAction>) {
        self.low_since.remove(host);
        let version = self.node_set.remove(host).ok();
        let replace = (self.config.replace_failed && allocated < self.config.max_pouches)
            .then_some(ScaleAction::Provision { reason: ScaleReason::Replace });
        (version, replace)
    }

    /// A provisioned pouch became Active. Returns the new node-set version.
    pub fn pouch_active(&mut self, host: &str) -> Result<u64, HrwError> {
        self.node_set.add(host)
    }

    /// A pouch entered draining and no longer takes new sessions.
    pub fn pouch_draining(&mut self, host: &str) -> Result<u64, HrwError> {
        self.low_since.remove(host);
        self.node_set.remove(host)
    }

    pub fn set_qos_recommendation(&mut self, recommend: bool) {
        self.qos_boost = recommend && self.config.qos_trigger;
    }

    pub fn qos_recommendation(&self) -> bool {
        self.qos_boost
    }

    pub fn target(&self, view: &PoolView) -> u32 {
        let required = HeadroomPolicy::required(view.total_sessions, view.capacity_sessions) + self.qos_boost as u32;
        self.headroom_policy().target(required)
    }

    /// Periodic sweep: provision up to target, drain idle pouches above it.
    pub fn enforce_headroom(&mut self, now: Millis, view: &PoolView) -> Vec<ScaleAction> {
        let mut actions = Vec::new();
        let target = self.target(view);

        // Refresh low-utilization timers.
        let rule = self.scale_down_rule();
        self.low_since.retain(|h, _| view.serving.iter().any(|p| &p.host == h));
        for p in &view.serving {
            if p.utilization < rule.low_util_threshold {
                self.low_since.entry(p.host.clone()).or_insert(now);
            } else {
                self.low_since.remove(&p.host);
            }
        }

        let serving = view.serving.len() as u32;
        let allocated = serving + view.provisioning;
        if allocated < target {
            let room = self.config.max_pouches.saturating_sub(allocated);
            for _ in 0..(target - allocated).min(room) {
                actions.push(ScaleAction::Provision { reason: ScaleReason::Headroom });
            }
        } else if serving > target {
            let mut idle: Vec<(Millis, &str)> = self
                .low_since
                .iter()
                .filter(|(_, &since)| now.saturating_sub(since) >= rule.dwell_ms)
                .map(|(h, &since)| (since, h.as_str()))
                .collect();
            idle.sort();
            let max_drain = (serving - target).min(serving.saturating_sub(1));
            for (_, host) in idle.into_iter().take(max_drain as usize) {
                actions.push(ScaleAction::Drain { host: host.into() });
            }
        }
        actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn signal(at: Millis) -> BusySignal {
        BusySignal { at, pouch: "p0".into(), call_id: format!("c{at}"), kind: BusyKind::Capacity }
    }

    fn view(serving: &[(&str, f64)], provisioning: u32, total: u64, capacity: u32) -> PoolView {
        PoolView {
            serving: serving.iter().map(|(h, u)| PouchLoad { host: (*h).into(), utilization: *u }).collect(),
            provisioning,
            total_sessions: total,
            capacity_sessions: capacity,
        }
    }

    #[test]
    fn burst_starts_one_provisioning() {
        let mut mu = ManagementUnit::new(AutoscalerConfig::default(), NodeSet::new());
        let mut in_flight = 0;
        let mut started = 0;
        for t in [0, 20, 40, 60, 80] {
            if mu.on_busy(signal(t), t, in_flight, 4).is_some() {
                started += 1;
                in_flight += 1;
            }
        }
        assert_eq!(started, 1);
        assert_eq!(mu.busy_log().len(), 5);
        assert!(mu.busy_log()[1].in_flight_at_receipt);
    }

    #[test]
    fn busy_while_in_flight_is_only_logged() {
        let mut mu = ManagementUnit::new(AutoscalerConfig::default(), NodeSet::new());
        assert_eq!(mu.on_busy(signal(5), 5, 1, 4), None);
        assert!(!mu.busy_log()[0].provisioned);
    }

    #[test]
    fn disabled_never_provisions() {
        let mut mu = ManagementUnit::new(AutoscalerConfig::disabled(), NodeSet::new());
        assert_eq!(mu.on_busy(signal(5), 5, 0, 1), None);
        assert_eq!(mu.pouch_failed("p0", 1).1, None);
    }

    #[test]
    fn headroom_provisions_the_difference() {
        let cfg = AutoscalerConfig { n_extra: 2, ..AutoscalerConfig::default() };
        let mut mu = ManagementUnit::new(cfg, NodeSet::new());
        let v = view(&[("p0", 1.0), ("p1", 1.0), ("p2", 1.0)], 0, 30, 10);
        let actions = mu.enforce_headroom(0, &v);
        assert_eq!(actions, vec![ScaleAction::Provision { reason: ScaleReason::Headroom }; 2]);
    }

    #[test]
    fn idle_pouches_drain_after_dwell() {
        let cfg = AutoscalerConfig { n_extra: 0, dwell_ms: 60_000, ..AutoscalerConfig::default() };
        let mut mu = ManagementUnit::new(cfg, NodeSet::new());
        let v = view(&[("p0", 0.5), ("p1", 0.0), ("p2", 0.0), ("p3", 0.0)], 0, 5, 10);
        assert!(mu.enforce_headroom(0, &v).is_empty());
        assert!(mu.enforce_headroom(50_000, &v).is_empty());
        let actions = mu.enforce_headroom(60_000, &v);
        assert_eq!(actions.len(), 3);
        assert!(actions.iter().all(|a| matches!(a, ScaleAction::Drain { host } if host != "p0")));
    }

    #[test]
    fn scale_down_never_empties() {
        let cfg = AutoscalerConfig { n_extra: 0, dwell_ms: 0, ..AutoscalerConfig::default() };
        let mut mu = ManagementUnit::new(cfg, NodeSet::new());
        let v = view(&[("p0", 0.0), ("p1", 0.0), ("p2", 0.0)], 0, 0, 10);
        let drained = mu.enforce_headroom(0, &v).len();
        assert_eq!(drained, 2);
        assert_eq!(mu.target(&v), 1);
    }

    #[test]
    fn qos_rules() {
        let calm = QosInputs { mean_rtt_ms: 0.0, utilizations: alloc::vec![0.0; 4], recent_latencies: alloc::vec![0; 10] };
        assert!(!qos_trigger(&calm, 2_500, 0.9));
        let slow = QosInputs { recent_latencies: alloc::vec![3_000; 10], ..calm.clone() };
        assert!(qos_trigger(&slow, 2_500, 0.9));
        let hot = QosInputs { utilizations: alloc::vec![0.1, 0.95], ..calm };
        assert!(qos_trigger(&hot, 2_500, 0.9));
    }

    #[test]
    fn required_rounds_up() {
        assert_eq!(HeadroomPolicy::required(0, 10), 0);
        assert_eq!(HeadroomPolicy::required(1, 10), 1);
        assert_eq!(HeadroomPolicy::required(21, 10), 3);
        assert_eq!(HeadroomPolicy { n_extra: 0 }.target(0), 1);
    }
}
