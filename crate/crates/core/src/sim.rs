//! Deterministic discrete-event core.
//!
//! Virtual time is an integer count of milliseconds. Events are ordered by
//! `(fire_at, seq)` where `seq` is a global insertion counter, so two events
//! scheduled for the same instant run in the order they were scheduled.
//!
//! Messages between hosts go through a [`TransportModel`]: latency is
//! `base ± jitter` (uniform, clamped at zero) and deliveries between a fixed
//! `(from, to)` pair never overtake each other.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hrw::Fnv1a;

/// Virtual milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("cannot schedule at {at} ms, clock is already at {now} ms")]
    SchedulingInPast { at: Millis, now: Millis },
    #[error("unknown host `{0}`")]
    UnknownHost(String),
    #[error("host `{0}` is already registered")]
    DuplicateHost(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HostId(u32);

impl HostId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Identifier of a scheduled event. Equal to its insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Millis,
}

impl SimClock {
    pub fn now(&self) -> Millis {
        self.now
    }

    fn advance_to(&mut self, t: Millis) {
        debug_assert!(t >= self.now, "clock moved backwards");
        if t > self.now {
            self.now = t;
        }
    }
}

/// Events carry their payload as either a host-to-host delivery or a local timer.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<P> {
    Deliver { from: HostId, to: HostId, sent_at: Millis, payload: P },
    Timer { host: HostId, payload: P },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub id: EventId,
    pub fire_at: Millis,
    pub kind: EventKind<P>,
}

impl<P> Event<P> {
    pub fn payload(&self) -> &P {
        match &self.kind {
            EventKind::Deliver { payload, .. } | EventKind::Timer { payload, .. } => payload,
        }
    }

    pub fn into_payload(self) -> P {
        match self.kind {
            EventKind::Deliver { payload, .. } | EventKind::Timer { payload, .. } => payload,
        }
    }
}

/// What the event loop hands to the handler.
#[derive(Debug)]
pub enum Dispatch<P> {
    /// The event fired normally.
    Fired(Event<P>),
    /// A delivery addressed to a host that is down. Already counted as dropped.
    Dropped(Event<P>),
}

struct Queued<P> {
    fire_at: Millis,
    seq: u64,
    kind: EventKind<P>,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Describes payloads for the event trace.
pub trait Traceable {
    fn trace_kind(&self) -> &'static str;
    fn trace_detail(&self, out: &mut dyn fmt::Write) -> fmt::Result;
}

/// One executed-event line of the trace log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub time: Millis,
    pub kind: String,
    pub src: String,
    pub dst: String,
    pub detail: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}\t{}", self.time, self.kind, self.src, self.dst, self.detail)
    }
}

/// Derives the seed of an independent random stream from the root seed.
pub fn stream_seed(root: u64, stream: &str) -> u64 {
    let mut h = Fnv1a::new();
    h.write_bytes(&root.to_le_bytes());
    h.write_bytes(stream.as_bytes());
    h.finish()
}

pub fn stream_rng(root: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TransportConfig {
    pub base_hop_latency_ms: Millis,
    pub jitter_ms: Millis,
    /// Latency of a message whose sender and receiver are the same host.
    pub local_latency_ms: Millis,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { base_hop_latency_ms: 10, jitter_ms: 2, local_latency_ms: 0 }
    }
}

/// Seeded per-hop latency sampler.
#[derive(Debug, Clone)]
pub struct TransportModel {
    config: TransportConfig,
    rng: ChaCha8Rng,
    samples: u64,
    sampled_sum: u64,
}

impl TransportModel {
    pub fn new(config: TransportConfig, seed: u64) -> Self {
        Self { config, rng: ChaCha8Rng::seed_from_u64(seed), samples: 0, sampled_sum: 0 }
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    /// Samples one inter-host latency from `[base - jitter, base + jitter]`, clamped at zero.
    pub fn sample(&mut self) -> Millis {
        let base = self.config.base_hop_latency_ms as i64;
        let jitter = self.config.jitter_ms as i64;
        let lat = if jitter == 0 { base } else { base + self.rng.gen_range(-jitter..=jitter) };
        let lat = lat.max(0) as Millis;
        self.samples += 1;
        self.sampled_sum += lat;
        lat
    }

    /// Running (count, sum) of sampled inter-host latencies.
    pub fn stats(&self) -> (u64, u64) {
        (self.samples, self.sampled_sum)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MessageCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
struct HostEntry {
    name: String,
    up: bool,
}

/// The event loop: clock, queue, hosts, transport and trace.
pub struct Engine<P> {
    clock: SimClock,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    next_seq: u64,
    hosts: Vec<HostEntry>,
    by_name: BTreeMap<String, HostId>,
    transport: TransportModel,
    last_delivery: BTreeMap<(HostId, HostId), Millis>,
    counters: MessageCounters,
    in_flight: u64,
    digest: Fnv1a,
    trace: Option<Vec<TraceLine>>,
}

impl<P: Traceable> Engine<P> {
    pub fn new(transport: TransportModel) -> Self {
        Self {
            clock: SimClock::default(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            hosts: Vec::new(),
            by_name: BTreeMap::new(),
            transport,
            last_delivery: BTreeMap::new(),
            counters: MessageCounters::default(),
            in_flight: 0,
            digest: Fnv1a::new(),
            trace: None,
        }
    }

    /// Keeps every executed event as a [`TraceLine`]. The digest is maintained either way.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Deliveries scheduled but not yet fired or dropped.
    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn counters(&self) -> MessageCounters {
        self.counters
    }

    pub fn transport(&self) -> &TransportModel {
        &self.transport
    }

    pub fn trace_digest(&self) -> u64 {
        self.digest.finish()
    }

    pub fn trace(&self) -> Option<&[TraceLine]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceLine>> {
        self.trace.take()
    }

    pub fn register_host(&mut self, name: &str) -> Result<HostId, SimError> {
        if self.by_name.contains_key(name) {
            return Err(SimError::DuplicateHost(name.into()));
        }
        let id = HostId(self.hosts.len() as u32);
        self.hosts.push(HostEntry { name: name.into(), up: true });
        self.by_name.insert(name.into(), id);
        Ok(id)
    }

    pub fn host(&self, name: &str) -> Result<HostId, SimError> {
        self.by_name.get(name).copied().ok_or_else(|| SimError::UnknownHost(name.into()))
    }

    pub fn host_name(&self, id: HostId) -> &str {
        &self.hosts[id.index()].name
    }

    pub fn is_up(&self, id: HostId) -> bool {
        self.hosts[id.index()].up
    }

    /// Marks a host down. Deliveries to it, including ones already in flight, are dropped.
    pub fn set_down(&mut self, id: HostId) {
        self.hosts[id.index()].up = false;
    }

    fn check_host(&self, id: HostId) -> Result<(), SimError> {
        if id.index() < self.hosts.len() {
            Ok(())
        } else {
            Err(SimError::UnknownHost(alloc::format!("#{}", id.0)))
        }
    }

    fn push(&mut self, fire_at: Millis, kind: EventKind<P>) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { fire_at, seq, kind }));
        EventId(seq)
    }

    /// Schedules a local timer on `host` firing at absolute time `at`.
    pub fn schedule(&mut self, host: HostId, payload: P, at: Millis) -> Result<EventId, SimError> {
        self.check_host(host)?;
        if at < self.now() {
            return Err(SimError::SchedulingInPast { at, now: self.now() });
        }
        Ok(self.push(at, EventKind::Timer { host, payload }))
    }

    /// Schedules a timer `delay` ms from now.
    pub fn schedule_in(&mut self, host: HostId, payload: P, delay: Millis) -> EventId {
        let at = self.now() + delay;
        self.push(at, EventKind::Timer { host, payload })
    }

    /// Sends a message; returns the id of the delivery event.
    pub fn send(&mut self, from: HostId, to: HostId, payload: P) -> Result<EventId, SimError> {
        self.check_host(from)?;
        self.check_host(to)?;
        let now = self.now();
        let latency = if from == to { self.transport.config.local_latency_ms } else { self.transport.sample() };
        let last = self.last_delivery.entry((from, to)).or_insert(0);
        let at = (now + latency).max(*last);
        *last = at;
        self.counters.sent += 1;
        self.in_flight += 1;
        Ok(self.push(at, EventKind::Deliver { from, to, sent_at: now, payload }))
    }

    /// Sends by host name.
    pub fn send_named(&mut self, from: &str, to: &str, payload: P) -> Result<EventId, SimError> {
        let from = self.host(from)?;
        let to = self.host(to)?;
        self.send(from, to, payload)
    }

    /// Records a non-event line (node-set changes, scaling actions) in the trace.
    pub fn note(&mut self, kind: &str, src: &str, dst: &str, detail: fmt::Arguments<'_>) {
        let now = self.now();
        let _ = fmt::write(&mut self.digest, format_args!("{now}\t{kind}\t{src}\t{dst}\t{detail}\n"));
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceLine {
                time: now,
                kind: kind.into(),
                src: src.into(),
                dst: dst.into(),
                detail: alloc::format!("{detail}"),
            });
        }
    }

    fn record(&mut self, ev: &Event<P>, dropped: bool) {
        let (src, dst) = match &ev.kind {
            EventKind::Deliver { from, to, .. } => (*from, *to),
            EventKind::Timer { host, .. } => (*host, *host),
        };
        let payload = ev.payload();
        let kind = if dropped { "drop" } else { payload.trace_kind() };
        let src = &self.hosts[src.index()].name;
        let dst = &self.hosts[dst.index()].name;
        let _ = write!(self.digest, "{}\t{}\t{}\t{}\t", ev.fire_at, kind, src, dst);
        if dropped {
            let _ = self.digest.write_str(payload.trace_kind());
            let _ = self.digest.write_str(":");
        }
        let _ = payload.trace_detail(&mut self.digest);
        let _ = self.digest.write_str("\n");
        if let Some(trace) = self.trace.as_mut() {
            let mut detail = String::new();
            if dropped {
                detail.push_str(payload.trace_kind());
                detail.push(':');
            }
            let _ = payload.trace_detail(&mut detail);
            trace.push(TraceLine { time: ev.fire_at, kind: kind.into(), src: src.clone(), dst: dst.clone(), detail });
        }
    }

    /// Pops the next event if it fires at or before `t_end`.
    pub fn step(&mut self, t_end: Millis) -> Option<Dispatch<P>> {
        let due = matches!(self.queue.peek(), Some(Reverse(q)) if q.fire_at <= t_end);
        if !due {
            return None;
        }
        let Reverse(q) = self.queue.pop()?;
        self.clock.advance_to(q.fire_at);
        let ev = Event { id: EventId(q.seq), fire_at: q.fire_at, kind: q.kind };
        let dropped = match &ev.kind {
            EventKind::Deliver { to, .. } => {
                self.in_flight -= 1;
                if self.hosts[to.index()].up {
                    self.counters.delivered += 1;
                    false
                } else {
                    self.counters.dropped += 1;
                    true
                }
            }
            EventKind::Timer { .. } => false,
        };
        self.record(&ev, dropped);
        Some(if dropped { Dispatch::Dropped(ev) } else { Dispatch::Fired(ev) })
    }

    /// Runs every event with `fire_at <= t_end` and leaves the clock at `t_end`.
    ///
    /// Returns the number of fired (not dropped) events.
    pub fn run_until<F>(&mut self, t_end: Millis, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, Dispatch<P>),
    {
        let mut executed = 0;
        while let Some(d) = self.step(t_end) {
            if matches!(d, Dispatch::Fired(_)) {
                executed += 1;
            }
            handler(self, d);
        }
        self.clock.advance_to(t_end.max(self.now()));
        executed
    }
}

use core::fmt::Write as _;

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(&'static str);

    impl Traceable for Tag {
        fn trace_kind(&self) -> &'static str {
            "tag"
        }
        fn trace_detail(&self, out: &mut dyn fmt::Write) -> fmt::Result {
            out.write_str(self.0)
        }
    }

    fn engine(base: Millis, jitter: Millis, seed: u64) -> Engine<Tag> {
        let cfg = TransportConfig { base_hop_latency_ms: base, jitter_ms: jitter, local_latency_ms: 0 };
        Engine::new(TransportModel::new(cfg, seed))
    }

    #[test]
    fn schedule_does_not_execute() {
        let mut e = engine(5, 0, 1);
        let h = e.register_host("a").unwrap();
        e.schedule(h, Tag("x"), 0).unwrap();
        assert_eq!(e.pending(), 1);
        assert_eq!(e.now(), 0);
    }

    #[test]
    fn same_instant_runs_in_schedule_order() {
        let mut e = engine(5, 0, 1);
        let h = e.register_host("a").unwrap();
        e.schedule(h, Tag("A"), 5).unwrap();
        e.schedule(h, Tag("B"), 5).unwrap();
        let mut seen = vec![];
        e.run_until(10, |_, d| {
            if let Dispatch::Fired(ev) = d {
                seen.push(ev.payload().0);
            }
        });
        assert_eq!(seen, ["A", "B"]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut e = engine(5, 0, 1);
        let h = e.register_host("a").unwrap();
        e.run_until(10, |_, _| {});
        assert_eq!(e.schedule(h, Tag("x"), 9), Err(SimError::SchedulingInPast { at: 9, now: 10 }));
    }

    #[test]
    fn empty_run_moves_clock_to_end() {
        let mut e = engine(5, 0, 1);
        assert_eq!(e.run_until(1000, |_, _| {}), 0);
        assert_eq!(e.now(), 1000);
    }

    #[test]
    fn future_event_stays_queued() {
        let mut e = engine(5, 0, 1);
        let h = e.register_host("a").unwrap();
        e.schedule(h, Tag("x"), 500).unwrap();
        assert_eq!(e.run_until(400, |_, _| {}), 0);
        assert_eq!(e.pending(), 1);
        assert_eq!(e.now(), 400);
    }

    #[test]
    fn zero_jitter_delivery_time() {
        let mut e = engine(5, 0, 1);
        let a = e.register_host("a").unwrap();
        let b = e.register_host("b").unwrap();
        e.run_until(100, |_, _| {});
        e.send(a, b, Tag("m")).unwrap();
        let mut at = None;
        e.run_until(1000, |_, d| {
            if let Dispatch::Fired(ev) = d {
                at = Some(ev.fire_at);
            }
        });
        assert_eq!(at, Some(105));
    }

    #[test]
    fn unknown_host_is_rejected() {
        let mut e = engine(5, 0, 1);
        let a = e.register_host("a").unwrap();
        assert_eq!(e.send(a, HostId(7), Tag("m")), Err(SimError::UnknownHost("#7".to_string())));
        assert_eq!(e.send_named("a", "zz", Tag("m")), Err(SimError::UnknownHost("zz".to_string())));
    }

    #[test]
    fn per_pair_fifo_under_large_jitter() {
        let mut e = engine(50, 50, 3);
        let a = e.register_host("a").unwrap();
        let b = e.register_host("b").unwrap();
        let names = ["m0", "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9"];
        let mut seen = vec![];
        let mut collect = |_: &mut Engine<Tag>, d: Dispatch<Tag>| {
            if let Dispatch::Fired(ev) = d {
                seen.push(ev.payload().0);
            }
        };
        for (i, n) in names.iter().enumerate() {
            e.run_until(100 + i as Millis, &mut collect);
            e.send(a, b, Tag(n)).unwrap();
        }
        e.run_until(10_000, &mut collect);
        assert_eq!(seen, names);
    }

    #[test]
    fn seeded_latency_mean() {
        // Brute-force average of the sampler: uniform on [2, 8] has mean 5.
        let mut t = TransportModel::new(TransportConfig { base_hop_latency_ms: 5, jitter_ms: 3, local_latency_ms: 0 }, 42);
        let n = 10_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let l = t.sample();
            assert!((2..=8).contains(&l));
            sum += l;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 5.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn jitter_wider_than_base_clamps_at_zero() {
        let mut t = TransportModel::new(TransportConfig { base_hop_latency_ms: 1, jitter_ms: 5, local_latency_ms: 0 }, 9);
        let mut zeros = 0;
        for _ in 0..1000 {
            let l = t.sample();
            assert!(l <= 6);
            zeros += (l == 0) as u32;
        }
        assert!(zeros > 0);
    }

    #[test]
    fn deliveries_to_down_hosts_are_dropped() {
        let mut e = engine(5, 0, 1);
        let a = e.register_host("a").unwrap();
        let b = e.register_host("b").unwrap();
        e.send(a, b, Tag("m1")).unwrap();
        e.send(a, b, Tag("m2")).unwrap();
        e.set_down(b);
        let mut dropped = 0;
        e.run_until(100, |_, d| {
            if let Dispatch::Dropped(_) = d {
                dropped += 1;
            }
        });
        assert_eq!(dropped, 2);
        let c = e.counters();
        assert_eq!(c.sent, c.delivered + c.dropped);
        assert_eq!(e.in_flight(), 0);
    }

    #[test]
    fn stream_seeds_differ_by_name() {
        assert_ne!(stream_seed(1, "transport"), stream_seed(1, "load"));
        assert_eq!(stream_seed(1, "transport"), stream_seed(1, "transport"));
    }
}
