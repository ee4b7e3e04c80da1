//! Pouches: isolated compute nodes hosting per-session micro services.
//!
//! Load is tracked in actor units. A session hosted entirely on one pouch
//! weighs [`UNITS_PER_SESSION`]; under spread placement each actor puts one
//! unit on its own pouch. Utilization is `units / (UNITS_PER_SESSION * capacity)`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::hss::LocalCache;
use crate::sim::Millis;

/// One unit per actor kind.
pub const UNITS_PER_SESSION: u64 = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PouchError {
    #[error("pouch `{0}` is not active")]
    PouchNotActive(String),
    #[error("host `{0}` is already in use")]
    DuplicateHost(String),
    #[error("unknown pouch `{0}`")]
    UnknownPouch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PouchState {
    Provisioning,
    Active,
    Failed,
    Retired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PouchConfig {
    pub capacity_sessions: u32,
    pub media_slots: u32,
    pub base_service_ms: Millis,
    pub provisioning_delay_ms: Millis,
    pub initial_pouch_count: u32,
    /// Upper bound on the load inflation factor.
    pub inflation_cap: u32,
}

impl Default for PouchConfig {
    fn default() -> Self {
        Self {
            capacity_sessions: 20,
            media_slots: 20,
            base_service_ms: 320,
            provisioning_delay_ms: 30_000,
            initial_pouch_count: 8,
            inflation_cap: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    Busy,
}

#[derive(Debug, Clone)]
pub struct PouchDescriptor {
    pub host: String,
    state: PouchState,
    pub capacity_sessions: u32,
    pub media_slots: u32,
    pub base_service_ms: Millis,
    pub inflation_cap: u32,
    active_sessions: u32,
    load_units: u64,
    media_in_use: u32,
    draining: bool,
    pub provisioned_at: Millis,
    pub active_at: Millis,
    pub cache: LocalCache,
}

impl PouchDescriptor {
    pub fn new(host: impl Into<String>, config: &PouchConfig) -> Self {
        let host = host.into();
        Self {
            cache: LocalCache::new(host.clone()),
            host,
            state: PouchState::Provisioning,
            capacity_sessions: config.capacity_sessions,
            media_slots: config.media_slots,
            base_service_ms: config.base_service_ms,
            inflation_cap: config.inflation_cap,
            active_sessions: 0,
            load_units: 0,
            media_in_use: 0,
            draining: false,
            provisioned_at: 0,
            active_at: 0,
        }
    }

    /// A pouch that starts Active.
    pub fn active(host: impl Into<String>, config: &PouchConfig) -> Self {
        let mut p = Self::new(host, config);
        p.state = PouchState::Active;
        p
    }

    pub fn state(&self) -> PouchState {
        self.state
    }

    pub fn is_active(&self) -> bool {
        self.state == PouchState::Active
    }

    pub fn is_draining(&self) -> bool {
        self.draining
    }

    /// Active and still accepting new sessions.
    pub fn is_serving(&self) -> bool {
        self.is_active() && !self.draining
    }

    pub fn active_sessions(&self) -> u32 {
        self.active_sessions
    }

    pub fn load_units(&self) -> u64 {
        self.load_units
    }

    pub fn media_in_use(&self) -> u32 {
        self.media_in_use
    }

    pub fn utilization(&self) -> f64 {
        self.load_units as f64 / (UNITS_PER_SESSION * self.capacity_sessions as u64) as f64
    }

    pub fn activate(&mut self, now: Millis) {
        if self.state == PouchState::Provisioning {
            self.state = PouchState::Active;
            self.active_at = now;
        }
    }

    /// Takes one session slot if there is room.
    pub fn admit(&mut self) -> Result<Admission, PouchError> {
        if !self.is_active() {
            return Err(PouchError::PouchNotActive(self.host.clone()));
        }
        if self.draining || self.active_sessions >= self.capacity_sessions {
            return Ok(Admission::Busy);
        }
        self.active_sessions += 1;
        assert!(self.active_sessions <= self.capacity_sessions);
        Ok(Admission::Admitted)
    }

    pub fn release_session(&mut self) {
        self.active_sessions = self.active_sessions.saturating_sub(1);
    }

    pub fn add_load(&mut self, units: u64) {
        self.load_units += units;
    }

    pub fn remove_load(&mut self, units: u64) {
        self.load_units = self.load_units.saturating_sub(units);
    }

    pub fn reserve_media(&mut self) -> bool {
        if self.is_active() && self.media_in_use < self.media_slots {
            self.media_in_use += 1;
            true
        } else {
            false
        }
    }

    pub fn release_media(&mut self) {
        self.media_in_use = self.media_in_use.saturating_sub(1);
    }

    /// Per-hop service time at the current load.
    pub fn service_time(&self) -> Millis {
        self.service_time_excluding(0)
    }

    /// Service time with `own_units` (the caller's own contribution) left out of the load.
    ///
    /// `base * min(1 / (1 - rho), cap)`, rounded to the nearest millisecond.
    pub fn service_time_excluding(&self, own_units: u64) -> Millis {
        let full = UNITS_PER_SESSION * self.capacity_sessions as u64;
        let load = self.load_units.saturating_sub(own_units);
        let cap = self.inflation_cap.max(1) as u64;
        if load >= full {
            return self.base_service_ms * cap;
        }
        let free = full - load;
        if full > cap * free {
            self.base_service_ms * cap
        } else {
            (self.base_service_ms * full + free / 2) / free
        }
    }

    pub fn start_draining(&mut self) {
        self.draining = true;
    }

    /// Marks the pouch Failed and discards its cache.
    pub fn fail(&mut self) {
        self.state = PouchState::Failed;
        self.cache.clear();
        self.active_sessions = 0;
        self.load_units = 0;
        self.media_in_use = 0;
    }

    pub fn retire(&mut self) {
        self.state = PouchState::Retired;
        self.cache.clear();
    }
}

/// All pouches ever created in a run, by host name.
#[derive(Debug, Clone, Default)]
pub struct PouchPool {
    pouches: Vec<PouchDescriptor>,
    by_host: BTreeMap<String, usize>,
    next_index: u32,
}

impl PouchPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// The next unused `p<N>.local` host name.
    ///
    /// The suffix matters: FNV-1a mixes the last few bytes of its input
    /// poorly, so names that differ only in their final characters would
    /// skew rendezvous placement.
    pub fn next_host_name(&mut self) -> String {
        loop {
            let name = alloc::format!("p{}.local", self.next_index);
            self.next_index += 1;
            if !self.by_host.contains_key(&name) {
                return name;
            }
        }
    }

    fn insert(&mut self, p: PouchDescriptor) -> Result<&mut PouchDescriptor, PouchError> {
        if self.by_host.contains_key(&p.host) {
            return Err(PouchError::DuplicateHost(p.host));
        }
        let i = self.pouches.len();
        self.by_host.insert(p.host.clone(), i);
        self.pouches.push(p);
        Ok(&mut self.pouches[i])
    }

    pub fn add_active(&mut self, host: &str, config: &PouchConfig, now: Millis) -> Result<&mut PouchDescriptor, PouchError> {
        let mut p = PouchDescriptor::active(host, config);
        p.provisioned_at = now;
        p.active_at = now;
        self.insert(p)
    }

    /// Starts provisioning; the caller schedules activation at the returned time.
    pub fn provision(&mut self, host: &str, config: &PouchConfig, now: Millis) -> Result<Millis, PouchError> {
        let mut p = PouchDescriptor::new(host, config);
        p.provisioned_at = now;
        let at = now + config.provisioning_delay_ms;
        self.insert(p)?;
        Ok(at)
    }

    pub fn get(&self, host: &str) -> Option<&PouchDescriptor> {
        self.by_host.get(host).map(|&i| &self.pouches[i])
    }

    pub fn get_mut(&mut self, host: &str) -> Option<&mut PouchDescriptor> {
        match self.by_host.get(host) {
            Some(&i) => Some(&mut self.pouches[i]),
            None => None,
        }
    }

    pub fn require_mut(&mut self, host: &str) -> Result<&mut PouchDescriptor, PouchError> {
        self.get_mut(host).ok_or_else(|| PouchError::UnknownPouch(host.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PouchDescriptor> {
        self.pouches.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut PouchDescriptor> {
        self.pouches.iter_mut()
    }

    pub fn count(&self, state: PouchState) -> usize {
        self.pouches.iter().filter(|p| p.state == state).count()
    }

    /// Active pouches still accepting sessions, in creation order.
    pub fn serving_hosts(&self) -> Vec<String> {
        self.pouches.iter().filter(|p| p.is_serving()).map(|p| p.host.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(capacity: u32) -> PouchConfig {
        PouchConfig { capacity_sessions: capacity, base_service_ms: 100, ..PouchConfig::default() }
    }

    fn with_sessions(capacity: u32, sessions: u32) -> PouchDescriptor {
        let mut p = PouchDescriptor::active("p0", &cfg(capacity));
        for _ in 0..sessions {
            assert_eq!(p.admit().unwrap(), Admission::Admitted);
            p.add_load(UNITS_PER_SESSION);
        }
        p
    }

    #[test]
    fn admission_threshold() {
        let mut p = with_sessions(10, 9);
        assert_eq!(p.admit().unwrap(), Admission::Admitted);
        assert_eq!(p.active_sessions(), 10);
        assert_eq!(p.admit().unwrap(), Admission::Busy);
        assert_eq!(p.active_sessions(), 10);
    }

    #[test]
    fn inactive_pouch_refuses() {
        let mut p = with_sessions(10, 0);
        p.fail();
        assert_eq!(p.admit(), Err(PouchError::PouchNotActive("p0".into())));
        let mut q = PouchDescriptor::new("p1", &cfg(10));
        assert!(matches!(q.admit(), Err(PouchError::PouchNotActive(_))));
    }

    #[test]
    fn inflation_rule() {
        assert_eq!(with_sessions(10, 0).service_time(), 100);
        assert_eq!(with_sessions(10, 5).service_time(), 200);
        // rho = 0.95: 1 / 0.05 = 20 exceeds the cap of 10.
        assert_eq!(with_sessions(20, 19).service_time(), 1000);
        assert_eq!(with_sessions(10, 10).service_time(), 1000);
        // rho = 0.9 sits exactly on the cap.
        assert_eq!(with_sessions(10, 9).service_time(), 1000);
        // rho before this session's own admission.
        assert_eq!(with_sessions(10, 6).service_time_excluding(UNITS_PER_SESSION), 200);
    }

    #[test]
    fn service_time_is_monotone_in_load() {
        let mut last = 0;
        for n in 0..=20 {
            let t = with_sessions(20, n).service_time();
            assert!(t >= last);
            assert!(t <= 1000);
            last = t;
        }
    }

    #[test]
    fn provisioning_lifecycle() {
        let mut pool = PouchPool::new();
        let at = pool.provision("p5", &PouchConfig { provisioning_delay_ms: 5_000, ..cfg(4) }, 10_000).unwrap();
        assert_eq!(at, 15_000);
        assert_eq!(pool.get("p5").unwrap().state(), PouchState::Provisioning);
        assert!(pool.serving_hosts().is_empty());
        assert!(matches!(pool.provision("p5", &cfg(4), 0), Err(PouchError::DuplicateHost(_))));
        pool.get_mut("p5").unwrap().activate(at);
        assert_eq!(pool.serving_hosts(), ["p5"]);
        assert_eq!(pool.next_host_name(), "p0.local");
        pool.add_active("p1.local", &cfg(4), 0).unwrap();
        assert_eq!(pool.next_host_name(), "p2.local");
    }

    #[test]
    fn draining_refuses_new_sessions() {
        let mut p = with_sessions(10, 1);
        p.start_draining();
        assert_eq!(p.admit().unwrap(), Admission::Busy);
        assert!(!p.is_serving());
    }

    #[test]
    fn media_slots() {
        let mut p = PouchDescriptor::active("p0", &PouchConfig { media_slots: 1, ..cfg(4) });
        assert!(p.reserve_media());
        assert!(!p.reserve_media());
        p.release_media();
        assert!(p.reserve_media());
    }
}
