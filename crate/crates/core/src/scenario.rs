//! Scenario presets and the constant-rate load generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autoscaler::AutoscalerConfig;
use crate::hss::{ShardKeyMode, SubscriberProfile};
use crate::pouch::PouchConfig;
use crate::session::PlacementPolicy;
use crate::sim::{stream_rng, Millis, TransportConfig};
use crate::sip::SipUri;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::ConfigInvalid(msg.into())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScenarioKind {
    #[default]
    Baseline,
    Autoscale,
    Failure,
    Tradeoff,
    Custom,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "baseline",
            ScenarioKind::Autoscale => "autoscale",
            ScenarioKind::Failure => "failure",
            ScenarioKind::Tradeoff => "tradeoff",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Baseline, Self::Autoscale, Self::Failure, Self::Tradeoff, Self::Custom].into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HssConfig {
    pub hss_query_latency_ms: Millis,
    pub local_cache_latency_ms: Millis,
    pub shard_mode: ShardKeyMode,
    /// Used for generated subscribers.
    pub default_max_concurrent_calls: u32,
}

impl Default for HssConfig {
    fn default() -> Self {
        Self { hss_query_latency_ms: 40, local_cache_latency_ms: 1, shard_mode: ShardKeyMode::HrwUri, default_max_concurrent_calls: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FailureInjection {
    pub at_ms: Millis,
    /// Host to kill; the pouch with the most sessions when unset.
    #[cfg_attr(feature = "serde", serde(default))]
    pub pouch: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Scenario {
    pub name: ScenarioKind,
    /// Calls per minute, constant.
    pub rate_per_min: f64,
    /// `None` means uncapped.
    pub max_concurrent: Option<u32>,
    pub hold_ms: Millis,
    pub duration_ms: Millis,
    pub subscriber_pairs: u32,
    pub rendezvous_lbs: u32,
    pub placement: PlacementPolicy,
    pub metrics_window_ms: Millis,
    pub trace: bool,
    pub transport: TransportConfig,
    pub pouch: PouchConfig,
    pub hss: HssConfig,
    pub autoscaler: AutoscalerConfig,
    pub failure: Option<FailureInjection>,
    /// Explicit population; generated from the seed when empty.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub subscribers: Vec<SubscriberProfile>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::baseline()
    }
}

impl Scenario {
    /// Eight fixed pouches, 30 calls/min capped at 80 concurrent, 300 s hold, one hour.
    pub fn baseline() -> Self {
        Self {
            name: ScenarioKind::Baseline,
            rate_per_min: 30.0,
            max_concurrent: Some(80),
            hold_ms: 300_000,
            duration_ms: 3_600_000,
            subscriber_pairs: 40,
            rendezvous_lbs: 2,
            placement: PlacementPolicy::CoLocated,
            metrics_window_ms: 60_000,
            trace: false,
            transport: TransportConfig::default(),
            pouch: PouchConfig::default(),
            hss: HssConfig::default(),
            autoscaler: AutoscalerConfig::disabled(),
            failure: None,
            subscribers: Vec::new(),
        }
    }

    /// Baseline load on two initial pouches with the management unit on.
    pub fn autoscale() -> Self {
        Self {
            name: ScenarioKind::Autoscale,
            pouch: PouchConfig { initial_pouch_count: 2, ..PouchConfig::default() },
            autoscaler: AutoscalerConfig { n_extra: 1, ..AutoscalerConfig::default() },
            ..Self::baseline()
        }
    }

    /// Baseline plus one pouch failure at 20 minutes; the failed pouch is replaced.
    pub fn failure() -> Self {
        Self {
            name: ScenarioKind::Failure,
            autoscaler: AutoscalerConfig { replace_failed: true, ..AutoscalerConfig::disabled() },
            failure: Some(FailureInjection { at_ms: 1_200_000, pouch: None }),
            ..Self::baseline()
        }
    }

    /// Uncapped load ramping onto a single small pouch; swept over `n_extra`.
    pub fn tradeoff(n_extra: u32) -> Self {
        Self {
            name: ScenarioKind::Tradeoff,
            rate_per_min: 60.0,
            max_concurrent: None,
            hold_ms: 120_000,
            duration_ms: 600_000,
            subscriber_pairs: 100,
            pouch: PouchConfig {
                capacity_sessions: 10,
                media_slots: 10,
                provisioning_delay_ms: 20_000,
                initial_pouch_count: 1,
                ..PouchConfig::default()
            },
            autoscaler: AutoscalerConfig { n_extra, qos_trigger: false, ..AutoscalerConfig::default() },
            ..Self::baseline()
        }
    }

    pub fn preset(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Baseline => Self::baseline(),
            ScenarioKind::Autoscale => Self::autoscale(),
            ScenarioKind::Failure => Self::failure(),
            ScenarioKind::Tradeoff => Self::tradeoff(0),
            ScenarioKind::Custom => Self { name: ScenarioKind::Custom, ..Self::baseline() },
        }
    }

    pub fn inter_arrival_ms(&self) -> f64 {
        60_000.0 / self.rate_per_min
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rate_per_min.is_finite() && self.rate_per_min > 0.0) {
            return Err(invalid("rate_per_min must be positive"));
        }
        if self.hold_ms == 0 {
            return Err(invalid("hold_ms must be positive"));
        }
        if self.duration_ms < self.hold_ms {
            return Err(invalid("duration_ms must cover at least one hold period"));
        }
        if self.max_concurrent == Some(0) {
            return Err(invalid("max_concurrent must be positive"));
        }
        if self.rendezvous_lbs == 0 {
            return Err(invalid("rendezvous_lbs must be positive"));
        }
        if self.subscribers.is_empty() && self.subscriber_pairs == 0 {
            return Err(invalid("subscriber_pairs must be positive"));
        }
        if !self.subscribers.is_empty() && self.subscribers.len() < 2 {
            return Err(invalid("at least two subscribers are needed"));
        }
        let p = &self.pouch;
        if p.capacity_sessions == 0 || p.media_slots == 0 {
            return Err(invalid("capacity_sessions and media_slots must be positive"));
        }
        if p.initial_pouch_count == 0 {
            return Err(invalid("initial_pouch_count must be positive"));
        }
        if p.inflation_cap == 0 {
            return Err(invalid("inflation_cap must be positive"));
        }
        if self.hss.default_max_concurrent_calls == 0 {
            return Err(invalid("default_max_concurrent_calls must be positive"));
        }
        let a = &self.autoscaler;
        if a.headroom && a.headroom_period_ms == 0 {
            return Err(invalid("headroom_period_ms must be positive"));
        }
        if !(0.0..=1.0).contains(&a.low_util_threshold) {
            return Err(invalid("low_util_threshold must be in [0, 1]"));
        }
        if a.max_pouches < p.initial_pouch_count {
            return Err(invalid("max_pouches is below initial_pouch_count"));
        }
        if self.metrics_window_ms == 0 {
            return Err(invalid("metrics_window_ms must be positive"));
        }
        Ok(())
    }

    /// The subscriber population: the explicit list, or `2 * subscriber_pairs` generated voice subscribers.
    pub fn population(&self, seed: u64) -> Vec<SubscriberProfile> {
        if !self.subscribers.is_empty() {
            return self.subscribers.clone();
        }
        let mut rng = stream_rng(seed, "subscribers");
        (0..2 * self.subscriber_pairs)
            .map(|i| {
                let tag: u32 = rng.gen_range(0..0x100_0000);
                let user = format!("u{i:04}x{tag:06x}");
                let uri = SipUri::new(user.clone(), "ims.test").expect("generated user is a token");
                SubscriberProfile::voice(uri, format!("Subscriber {i}"), self.hss.default_max_concurrent_calls)
            })
            .collect()
    }
}

/// Constant-rate arrivals: arrival `k` (from 0) fires at `floor(k * 60000 / rate)` ms.
#[derive(Debug, Clone)]
pub struct LoadGenerator {
    rate_per_min: f64,
    horizon: Millis,
    next: u64,
}

impl LoadGenerator {
    pub fn new(rate_per_min: f64, horizon: Millis) -> Self {
        Self { rate_per_min, horizon, next: 0 }
    }

    pub fn arrival_time(&self, k: u64) -> Millis {
        (k as f64 * 60_000.0 / self.rate_per_min) as Millis
    }
}

impl Iterator for LoadGenerator {
    type Item = Millis;

    fn next(&mut self) -> Option<Millis> {
        let t = self.arrival_time(self.next);
        if t >= self.horizon {
            return None;
        }
        self.next += 1;
        Some(t)
    }
}

/// Skip an arrival when the system already holds `max_concurrent` calls.
pub fn should_throttle(live_calls: u32, max_concurrent: Option<u32>) -> bool {
    max_concurrent.is_some_and(|cap| live_calls >= cap)
}

/// Caller and callee of the `k`-th placed call (from 0), cycling over fixed pairs.
pub fn pair_for(k: u64, population: usize) -> (usize, usize) {
    let pairs = (population / 2).max(1) as u64;
    let p = (k % pairs) as usize;
    (2 * p, (2 * p + 1) % population)
}

/// Parses provisioning lines: `uri<TAB>display_name<TAB>max_concurrent_calls`.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_provisioning(text: &str) -> Result<Vec<SubscriberProfile>, ConfigError> {
    let mut out: Vec<SubscriberProfile> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [uri, name, max] = fields[..] else {
            return Err(invalid(format!("provisioning line {}: expected 3 tab-separated fields", n + 1)));
        };
        let uri: SipUri = uri.parse().map_err(|_| invalid(format!("provisioning line {}: bad uri `{uri}`", n + 1)))?;
        let max: u32 = max
            .trim()
            .parse()
            .ok()
            .filter(|m| *m > 0)
            .ok_or_else(|| invalid(format!("provisioning line {}: bad max_concurrent_calls `{max}`", n + 1)))?;
        if out.iter().any(|p| p.uri == uri) {
            return Err(invalid(format!("provisioning line {}: duplicate subscriber {uri}", n + 1)));
        }
        out.push(SubscriberProfile::voice(uri, name, max));
    }
    Ok(out)
}
