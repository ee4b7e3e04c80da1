//! Central subscriber store and per-pouch profile caches.
//!
//! The center is the source of truth. Caches fill on miss and are
//! invalidated by the center on every profile update (write-through,
//! targeted invalidation). Absence is never cached.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::hrw::hash64;
use crate::sip::{SipMessage, SipUri};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HssError {
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(SipUri),
    #[error("profile uri {actual} does not match {expected}")]
    UriMismatch { expected: SipUri, actual: SipUri },
    #[error("subscriber {0} is already provisioned")]
    AlreadyProvisioned(SipUri),
    #[error("max_concurrent_calls must be positive")]
    InvalidProfile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubscriberProfile {
    pub uri: SipUri,
    pub display_name: String,
    pub max_concurrent_calls: u32,
    pub services: BTreeSet<String>,
    pub version: u64,
}

impl SubscriberProfile {
    /// A voice subscriber at version 1.
    pub fn voice(uri: SipUri, display_name: impl Into<String>, max_concurrent_calls: u32) -> Self {
        let mut services = BTreeSet::new();
        services.insert("voice".to_string());
        Self { uri, display_name: display_name.into(), max_concurrent_calls, services, version: 1 }
    }
}

/// The central HSS.
#[derive(Debug, Clone, Default)]
pub struct CentralHss {
    profiles: BTreeMap<SipUri, SubscriberProfile>,
    /// Which pouches were handed each profile and may still cache it.
    holders: BTreeMap<SipUri, BTreeSet<String>>,
    queries: u64,
    queries_by_uri: BTreeMap<SipUri, u64>,
}

impl CentralHss {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn provision(&mut self, mut profile: SubscriberProfile) -> Result<(), HssError> {
        if profile.max_concurrent_calls == 0 {
            return Err(HssError::InvalidProfile);
        }
        if self.profiles.contains_key(&profile.uri) {
            return Err(HssError::AlreadyProvisioned(profile.uri));
        }
        profile.version = profile.version.max(1);
        self.profiles.insert(profile.uri.clone(), profile);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn contains(&self, uri: &SipUri) -> bool {
        self.profiles.contains_key(uri)
    }

    /// Reads the current profile without counting a query.
    pub fn peek(&self, uri: &SipUri) -> Option<&SubscriberProfile> {
        self.profiles.get(uri)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &SubscriberProfile> {
        self.profiles.values()
    }

    pub fn query_count(&self) -> u64 {
        self.queries
    }

    pub fn queries_by_uri(&self) -> &BTreeMap<SipUri, u64> {
        &self.queries_by_uri
    }

    /// A counted query.
    pub fn central_lookup(&mut self, uri: &SipUri) -> Result<SubscriberProfile, HssError> {
        self.queries += 1;
        *self.queries_by_uri.entry(uri.clone()).or_default() += 1;
        self.profiles.get(uri).cloned().ok_or_else(|| HssError::UnknownSubscriber(uri.clone()))
    }

    /// A counted query on behalf of `pouch`, which is recorded as a holder.
    pub fn fetch_for(&mut self, pouch: &str, uri: &SipUri) -> Result<SubscriberProfile, HssError> {
        let p = self.central_lookup(uri)?;
        self.holders.entry(uri.clone()).or_default().insert(pouch.into());
        Ok(p)
    }

    /// Forgets every holder record of a pouch whose cache was discarded.
    pub fn forget_pouch(&mut self, pouch: &str) {
        for set in self.holders.values_mut() {
            set.remove(pouch);
        }
    }

    /// Writes `new` through and returns the new version plus the pouches that must be invalidated.
    pub fn update_profile(&mut self, uri: &SipUri, mut new: SubscriberProfile) -> Result<(u64, Vec<String>), HssError> {
        if &new.uri != uri {
            return Err(HssError::UriMismatch { expected: uri.clone(), actual: new.uri });
        }
        if new.max_concurrent_calls == 0 {
            return Err(HssError::InvalidProfile);
        }
        let current = self.profiles.get_mut(uri).ok_or_else(|| HssError::UnknownSubscriber(uri.clone()))?;
        new.version = current.version + 1;
        let version = new.version;
        *current = new;
        let notify = self.holders.remove(uri).map(|s| s.into_iter().collect()).unwrap_or_default();
        Ok((version, notify))
    }
}

/// One pouch's shard of subscriber profiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalCache {
    pouch: String,
    entries: BTreeMap<SipUri, SubscriberProfile>,
    hits: u64,
    misses: u64,
}

impl LocalCache {
    pub fn new(pouch: impl Into<String>) -> Self {
        Self { pouch: pouch.into(), entries: BTreeMap::new(), hits: 0, misses: 0 }
    }

    pub fn pouch(&self) -> &str {
        &self.pouch
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &SubscriberProfile> {
        self.entries.values()
    }

    /// Counted lookup: a hit returns the profile, a miss returns `None`.
    pub fn lookup(&mut self, uri: &SipUri) -> Option<SubscriberProfile> {
        match self.entries.get(uri) {
            Some(p) => {
                self.hits += 1;
                Some(p.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Counts a lookup served by a fetch that another lookup already started.
    pub fn record_coalesced_hit(&mut self) {
        self.hits += 1;
    }

    pub fn insert(&mut self, profile: SubscriberProfile) {
        match self.entries.get(&profile.uri) {
            Some(held) if held.version >= profile.version => {}
            _ => {
                self.entries.insert(profile.uri.clone(), profile);
            }
        }
    }

    /// Drops the entry if it is older than `version`. Returns whether anything was removed.
    pub fn invalidate(&mut self, uri: &SipUri, version: u64) -> bool {
        match self.entries.get(uri) {
            Some(p) if p.version < version => {
                self.entries.remove(uri);
                true
            }
            _ => false,
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Synchronous read-through: a hit costs nothing at the center, a miss queries it and fills the cache.
pub fn cache_get_or_fetch(
    cache: &mut LocalCache,
    central: &mut CentralHss,
    uri: &SipUri,
) -> Result<(SubscriberProfile, bool), HssError> {
    if let Some(p) = cache.lookup(uri) {
        return Ok((p, true));
    }
    let profile = central.fetch_for(&cache.pouch, uri)?;
    cache.insert(profile.clone());
    Ok((profile, false))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ShardKeyMode {
    #[default]
    HrwUri,
    SessionHash,
    FirstLetter,
}

/// The key a rendezvous balancer hashes to place `invite`.
pub fn shard_key(mode: ShardKeyMode, invite: &SipMessage) -> String {
    match mode {
        ShardKeyMode::HrwUri => invite.from.to_canonical(),
        ShardKeyMode::SessionHash => hash64(invite.call_id.as_bytes()).0.to_string(),
        ShardKeyMode::FirstLetter => invite.from.user().chars().next().map(|c| c.to_lowercase().collect()).unwrap_or_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uri(u: &str) -> SipUri {
        SipUri::new(u, "ims.test").unwrap()
    }

    fn center() -> CentralHss {
        let mut c = CentralHss::new();
        c.provision(SubscriberProfile::voice(uri("alice"), "Alice", 2)).unwrap();
        c.provision(SubscriberProfile::voice(uri("bob"), "Bob", 2)).unwrap();
        c
    }

    #[test]
    fn lookup_counts_every_query() {
        let mut c = center();
        assert_eq!(c.central_lookup(&uri("alice")).unwrap().display_name, "Alice");
        assert_eq!(c.query_count(), 1);
        c.central_lookup(&uri("alice")).unwrap();
        assert_eq!(c.query_count(), 2);
        assert_eq!(c.central_lookup(&uri("mallory")), Err(HssError::UnknownSubscriber(uri("mallory"))));
    }

    #[test]
    fn miss_then_hit() {
        let mut c = center();
        let mut cache = LocalCache::new("p3");
        let (_, hit) = cache_get_or_fetch(&mut cache, &mut c, &uri("alice")).unwrap();
        assert!(!hit);
        let before = c.query_count();
        let (p, hit) = cache_get_or_fetch(&mut cache, &mut c, &uri("alice")).unwrap();
        assert!(hit);
        assert_eq!(p.uri, uri("alice"));
        assert_eq!(c.query_count(), before);
        assert_eq!(cache.hits() + cache.misses(), cache.lookups());
    }

    #[test]
    fn rebuilt_cache_misses_once() {
        let mut c = center();
        let mut old = LocalCache::new("p3");
        cache_get_or_fetch(&mut old, &mut c, &uri("alice")).unwrap();
        c.forget_pouch("p3");
        let mut fresh = LocalCache::new("p9");
        assert!(!cache_get_or_fetch(&mut fresh, &mut c, &uri("alice")).unwrap().1);
        assert!(cache_get_or_fetch(&mut fresh, &mut c, &uri("alice")).unwrap().1);
    }

    #[test]
    fn unknown_is_not_cached() {
        let mut c = center();
        let mut cache = LocalCache::new("p0");
        assert!(matches!(cache_get_or_fetch(&mut cache, &mut c, &uri("mallory")), Err(HssError::UnknownSubscriber(_))));
        assert!(cache.is_empty());
        assert!(cache_get_or_fetch(&mut cache, &mut c, &uri("mallory")).is_err());
        assert_eq!(c.query_count(), 2);
    }

    #[test]
    fn update_invalidates_holders() {
        let mut c = center();
        let mut cache = LocalCache::new("p3");
        cache_get_or_fetch(&mut cache, &mut c, &uri("alice")).unwrap();
        let mut new = c.peek(&uri("alice")).unwrap().clone();
        new.display_name = "Alice B".into();
        let (v, notify) = c.update_profile(&uri("alice"), new).unwrap();
        assert_eq!(v, 2);
        assert_eq!(notify, ["p3"]);
        assert!(cache.invalidate(&uri("alice"), v));
        let (p, hit) = cache_get_or_fetch(&mut cache, &mut c, &uri("alice")).unwrap();
        assert!(!hit);
        assert_eq!((p.version, p.display_name.as_str()), (2, "Alice B"));
    }

    #[test]
    fn update_errors_and_quiet_updates() {
        let mut c = center();
        let bob = c.peek(&uri("bob")).unwrap().clone();
        assert!(matches!(c.update_profile(&uri("alice"), bob.clone()), Err(HssError::UriMismatch { .. })));
        let (v, notify) = c.update_profile(&uri("bob"), bob).unwrap();
        assert_eq!(v, 2);
        assert!(notify.is_empty());
        let ghost = SubscriberProfile::voice(uri("ghost"), "", 1);
        assert!(matches!(c.update_profile(&uri("ghost"), ghost), Err(HssError::UnknownSubscriber(_))));
    }

    #[test]
    fn stale_inserts_do_not_overwrite() {
        let mut cache = LocalCache::new("p0");
        let mut p = SubscriberProfile::voice(uri("alice"), "A", 1);
        p.version = 3;
        cache.insert(p.clone());
        p.version = 2;
        cache.insert(p);
        assert_eq!(cache.entries().next().unwrap().version, 3);
        assert!(!cache.invalidate(&uri("alice"), 3));
        assert!(cache.invalidate(&uri("alice"), 4));
    }

    fn invite_from(user: &str, call_id: &str) -> SipMessage {
        SipMessage::invite(call_id, SipUri::new(user, "ims.test").unwrap(), uri("bob"), 1, None)
    }

    #[test]
    fn shard_keys() {
        assert_eq!(shard_key(ShardKeyMode::FirstLetter, &invite_from("Bob", "x")), "b");
        assert_eq!(shard_key(ShardKeyMode::HrwUri, &invite_from("alice", "x")), "sip:alice@ims.test");
        // FNV-1a("c1") from the independent oracle.
        assert_eq!(shard_key(ShardKeyMode::SessionHash, &invite_from("alice", "c1")), "622199369613600857");
    }
}
