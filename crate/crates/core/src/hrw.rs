//! Entry and rendezvous load balancing.
//!
//! A rendezvous balancer picks, for each key, the member whose
//! `hash64(key ++ host)` is largest (highest random weight). Removing a
//! member only moves the keys that member owned, and adding one only moves
//! keys onto the new member.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::hss::{shard_key, ShardKeyMode};
use crate::sip::{Method, SipMessage, SipUri};

const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

/// Incremental 64-bit FNV-1a.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub const fn new() -> Self {
        Self(FNV_OFFSET_BASIS)
    }

    #[inline]
    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Write for Fnv1a {
    fn write_str(&mut self, s: &str) -> fmt::Result {
        self.write_bytes(s.as_bytes());
        Ok(())
    }
}

impl core::hash::Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        self.write_bytes(bytes);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashValue(pub u64);

pub fn hash64(s: &[u8]) -> HashValue {
    let mut h = Fnv1a::new();
    h.write_bytes(s);
    HashValue(h.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HrwError {
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("no rendezvous load balancers configured")]
    NoRendezvousLbs,
    #[error("`{0}` is already a member")]
    DuplicateMember(String),
    #[error("`{0}` is not a member")]
    NotAMember(String),
    #[error("only INVITE requests are routed")]
    NotAnInvite,
}

/// Versioned membership of Active pouches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeSet {
    members: Vec<String>,
    version: u64,
}

impl NodeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_members<I, S>(members: I) -> Result<Self, HrwError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = Self::new();
        for m in members {
            set.add(m)?;
        }
        Ok(set)
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, host: &str) -> bool {
        self.members.iter().any(|m| m == host)
    }

    pub fn add(&mut self, host: impl Into<String>) -> Result<u64, HrwError> {
        let host = host.into();
        if self.contains(&host) {
            return Err(HrwError::DuplicateMember(host));
        }
        self.members.push(host);
        self.version += 1;
        Ok(self.version)
    }

    pub fn remove(&mut self, host: &str) -> Result<u64, HrwError> {
        let pos = self.members.iter().position(|m| m == host).ok_or_else(|| HrwError::NotAMember(host.into()))?;
        self.members.remove(pos);
        self.version += 1;
        Ok(self.version)
    }
}

/// Picks the member maximizing `hash64(key ++ host)`; equal hashes go to the smaller host name.
pub fn select_by_key<'a>(key: &[u8], nodes: &'a NodeSet) -> Result<&'a str, HrwError> {
    let mut prefix = Fnv1a::new();
    prefix.write_bytes(key);
    let mut best: Option<(u64, &str)> = None;
    for host in &nodes.members {
        let mut h = prefix;
        h.write_bytes(host.as_bytes());
        let w = h.finish();
        best = match best {
            Some((bw, bh)) if bw > w || (bw == w && bh <= host.as_str()) => Some((bw, bh)),
            _ => Some((w, host.as_str())),
        };
    }
    best.map(|(_, h)| h).ok_or(HrwError::EmptyNodeSet)
}

pub fn select_node<'a>(uri: &SipUri, nodes: &'a NodeSet) -> Result<&'a str, HrwError> {
    select_by_key(uri.to_canonical().as_bytes(), nodes)
}

/// A rendezvous balancer holding its latest node-set snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RendezvousLb {
    pub id: String,
    node_set: NodeSet,
    mode: ShardKeyMode,
}

impl RendezvousLb {
    pub fn new(id: impl Into<String>, node_set: NodeSet) -> Self {
        Self { id: id.into(), node_set, mode: ShardKeyMode::HrwUri }
    }

    pub fn with_mode(mut self, mode: ShardKeyMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn node_set(&self) -> &NodeSet {
        &self.node_set
    }

    pub fn mode(&self) -> ShardKeyMode {
        self.mode
    }

    /// Installs `snapshot` unless it is older than what is held. Returns whether it was applied.
    pub fn install(&mut self, snapshot: NodeSet) -> bool {
        if snapshot.version > self.node_set.version {
            self.node_set = snapshot;
            true
        } else {
            false
        }
    }
}

/// Round-robin cursor used by the entry balancer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundRobin {
    counter: u64,
}

impl RoundRobin {
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_index(&mut self, len: usize) -> Result<usize, HrwError> {
        if len == 0 {
            return Err(HrwError::NoRendezvousLbs);
        }
        let i = (self.counter % len as u64) as usize;
        self.counter += 1;
        Ok(i)
    }
}

pub fn pick_rendezvous<'a>(lbs: &'a [RendezvousLb], rr: &mut RoundRobin) -> Result<&'a RendezvousLb, HrwError> {
    let i = rr.next_index(lbs.len())?;
    Ok(&lbs[i])
}

/// Remembers which (subscriber, node-set version) pairs were already routed.
#[derive(Debug, Clone, Default)]
pub struct RouteLog {
    seen: BTreeSet<(String, u64)>,
}

impl RouteLog {
    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingDecision {
    pub target: String,
    /// The subscriber was already routed under this node-set version, so its profile should be cached.
    pub cache_expected: bool,
}

pub fn route_invite(invite: &SipMessage, lb: &RendezvousLb, log: &mut RouteLog) -> Result<RoutingDecision, HrwError> {
    if invite.method() != Some(Method::Invite) {
        return Err(HrwError::NotAnInvite);
    }
    let key = shard_key(lb.mode, invite);
    let target = select_by_key(key.as_bytes(), &lb.node_set)?;
    let cache_expected = !log.seen.insert((invite.from.to_canonical(), lb.node_set.version));
    Ok(RoutingDecision { target: target.into(), cache_expected })
}
