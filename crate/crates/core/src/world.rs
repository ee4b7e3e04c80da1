//! One simulated deployment: entry balancer, rendezvous balancers, pouches,
//! the central HSS and the management unit, all driven by a single engine.
//!
//! Host names: `ue` (all subscribers' terminals), `lb`, `rlb<i>`, `mgmt`,
//! `hss` and one `p<N>` per pouch.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::autoscaler::{qos_trigger, BusyKind, BusySignal, ManagementUnit, PoolView, PouchLoad, QosInputs, ScaleAction, ScaleReason};
use crate::hrw::{pick_rendezvous, route_invite, HrwError, NodeSet, RendezvousLb, RoundRobin, RouteLog};
use crate::hss::{CentralHss, HssError, SubscriberProfile};
use crate::metrics::{window_stats, CallOutcome, CallRecord, Counters, FailureRecord, MetricsReport, ScaleEvent, ScaleKind};
use crate::pouch::{Admission, PouchPool, PouchState};
use crate::scenario::{pair_for, should_throttle, ConfigError, LoadGenerator, Scenario};
use crate::session::{check_subscription, ActorKind, CallSession, DropReason, SessionState};
use crate::sim::{stream_seed, Dispatch, Engine, EventKind, HostId, Millis, Traceable, TransportModel};
use crate::sip::{make_busy_response, Method, SipMessage, SipUri, StatusCode};

/// Message exchanged between two actors of the same call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorStep {
    Create,
    ProfileQuery,
    ProfileReply,
    Anchor,
    Telephony,
    Media,
    MediaReady,
    Reject,
}

impl ActorStep {
    fn as_str(self) -> &'static str {
        match self {
            ActorStep::Create => "create",
            ActorStep::ProfileQuery => "profile-query",
            ActorStep::ProfileReply => "profile-reply",
            ActorStep::Anchor => "anchor",
            ActorStep::Telephony => "telephony",
            ActorStep::Media => "media",
            ActorStep::MediaReady => "media-ready",
            ActorStep::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Msg {
    Arrival,
    Hangup { call: u64 },
    Sip { call: u64, msg: SipMessage },
    Actor { call: u64, step: ActorStep },
    ServiceDone { call: u64, actor: ActorKind },
    CacheReady { call: u64 },
    HssQuery { uri: SipUri },
    HssServe { pouch: String, uri: SipUri },
    HssReply { uri: SipUri, profile: Result<SubscriberProfile, HssError> },
    Invalidate { uri: SipUri, version: u64 },
    ProfileUpdate { profile: SubscriberProfile },
    Busy(BusySignal),
    NodeSetPush(NodeSet),
    Activate { host: String },
    HeadroomTick,
    FailPouch { host: Option<String> },
}

impl Traceable for Msg {
    fn trace_kind(&self) -> &'static str {
        match self {
            Msg::Arrival => "arrival",
            Msg::Hangup { .. } => "hangup",
            Msg::Sip { .. } => "sip",
            Msg::Actor { .. } => "actor",
            Msg::ServiceDone { .. } => "service",
            Msg::CacheReady { .. } => "cache",
            Msg::HssQuery { .. } => "hss-query",
            Msg::HssServe { .. } => "hss-serve",
            Msg::HssReply { .. } => "hss-reply",
            Msg::Invalidate { .. } => "invalidate",
            Msg::ProfileUpdate { .. } => "profile-update",
            Msg::Busy(_) => "busy",
            Msg::NodeSetPush(_) => "nodeset-push",
            Msg::Activate { .. } => "activate",
            Msg::HeadroomTick => "headroom",
            Msg::FailPouch { .. } => "fail",
        }
    }

    fn trace_detail(&self, out: &mut dyn fmt::Write) -> fmt::Result {
        match self {
            Msg::Arrival | Msg::HeadroomTick => Ok(()),
            Msg::Hangup { call } | Msg::CacheReady { call } => write!(out, "c{call}"),
            Msg::Sip { msg, .. } => match (msg.method(), msg.status()) {
                (Some(m), _) => write!(out, "{} {}", m.as_str(), msg.call_id),
                (_, Some(s)) => write!(out, "{} {} {}", s.code(), msg.cseq.method.as_str(), msg.call_id),
                _ => Ok(()),
            },
            Msg::Actor { call, step } => write!(out, "{} c{call}", step.as_str()),
            Msg::ServiceDone { call, actor } => write!(out, "{actor} c{call}"),
            Msg::HssQuery { uri } => write!(out, "{uri}"),
            Msg::HssServe { pouch, uri } => write!(out, "{uri} for {pouch}"),
            Msg::HssReply { uri, profile } => match profile {
                Ok(p) => write!(out, "{uri} v{}", p.version),
                Err(_) => write!(out, "{uri} unknown"),
            },
            Msg::Invalidate { uri, version } => write!(out, "{uri} v{version}"),
            Msg::ProfileUpdate { profile } => write!(out, "{}", profile.uri),
            Msg::Busy(s) => write!(out, "{} {} {}", s.kind.as_str(), s.pouch, s.call_id),
            Msg::NodeSetPush(ns) => write!(out, "v{} n={}", ns.version(), ns.len()),
            Msg::Activate { host } => write!(out, "{host}"),
            Msg::FailPouch { host } => write!(out, "{}", host.as_deref().unwrap_or("busiest")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Hosts {
    ue: HostId,
    lb: HostId,
    mgmt: HostId,
    hss: HostId,
}

#[derive(Debug)]
struct Call {
    record: CallRecord,
    invite: SipMessage,
    session: Option<CallSession>,
    orig_profile: Option<Result<SubscriberProfile, HssError>>,
    callee_profile: Option<Result<SubscriberProfile, HssError>>,
    counted_active: bool,
    live: bool,
}

impl Call {
    fn next_lookup(&self) -> Option<&SipUri> {
        if self.orig_profile.is_none() {
            Some(&self.record.caller)
        } else if self.callee_profile.is_none() {
            Some(&self.record.callee)
        } else {
            None
        }
    }

    fn is_running(&self) -> bool {
        self.session.as_ref().is_some_and(|s| !s.state().is_final())
    }
}

struct State {
    scenario: Scenario,
    seed: u64,
    hosts: Hosts,
    rlb_hosts: Vec<HostId>,
    pool: PouchPool,
    hss: CentralHss,
    rlbs: Vec<RendezvousLb>,
    rr: RoundRobin,
    route_log: RouteLog,
    mgmt: ManagementUnit,
    population: Vec<SipUri>,
    calls: Vec<Call>,
    active_calls: BTreeMap<SipUri, u32>,
    pending_fetch: BTreeMap<(String, SipUri), Vec<u64>>,
    live: u32,
    peak: u32,
    concurrency: Vec<(Millis, u32)>,
    load: LoadGenerator,
    arrivals: u64,
    throttled: u64,
    scale_events: Vec<ScaleEvent>,
    failures: Vec<FailureRecord>,
    busy_signals: [u64; 3],
}

/// A configured run that can be stepped, inspected and finally turned into a report.
pub struct Simulation {
    engine: Engine<Msg>,
    st: State,
}

/// Builds the deployment for `(scenario, seed)`, runs it to the horizon, drains it and reports.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<MetricsReport, ConfigError> {
    Ok(Simulation::new(scenario, seed)?.run())
}

fn cfg_err(e: impl fmt::Display) -> ConfigError {
    ConfigError::ConfigInvalid(format!("{e}"))
}

impl Simulation {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, ConfigError> {
        scenario.validate()?;
        let transport = TransportModel::new(scenario.transport, stream_seed(seed, "transport"));
        let mut engine = Engine::new(transport);
        if scenario.trace {
            engine = engine.with_trace();
        }
        let hosts = Hosts {
            ue: engine.register_host("ue").map_err(cfg_err)?,
            lb: engine.register_host("lb").map_err(cfg_err)?,
            mgmt: engine.register_host("mgmt").map_err(cfg_err)?,
            hss: engine.register_host("hss").map_err(cfg_err)?,
        };
        let rlb_hosts = (0..scenario.rendezvous_lbs)
            .map(|i| engine.register_host(&format!("rlb{i}")))
            .collect::<Result<Vec<_>, _>>()
            .map_err(cfg_err)?;

        let mut pool = PouchPool::new();
        let mut members = Vec::new();
        for _ in 0..scenario.pouch.initial_pouch_count {
            let host = pool.next_host_name();
            pool.add_active(&host, &scenario.pouch, 0).map_err(cfg_err)?;
            engine.register_host(&host).map_err(cfg_err)?;
            members.push(host);
        }
        let node_set = NodeSet::from_members(members).map_err(cfg_err)?;
        let rlbs = (0..scenario.rendezvous_lbs)
            .map(|i| RendezvousLb::new(format!("rlb{i}"), node_set.clone()).with_mode(scenario.hss.shard_mode))
            .collect();
        let mgmt = ManagementUnit::new(scenario.autoscaler, node_set);

        let mut hss = CentralHss::new();
        let population = scenario.population(seed);
        let uris = population.iter().map(|p| p.uri.clone()).collect();
        for p in population {
            hss.provision(p).map_err(cfg_err)?;
        }

        let mut sim = Self {
            engine,
            st: State {
                scenario: scenario.clone(),
                seed,
                hosts,
                rlb_hosts,
                pool,
                hss,
                rlbs,
                rr: RoundRobin::default(),
                route_log: RouteLog::default(),
                mgmt,
                population: uris,
                calls: Vec::new(),
                active_calls: BTreeMap::new(),
                pending_fetch: BTreeMap::new(),
                live: 0,
                peak: 0,
                concurrency: vec![(0, 0)],
                load: LoadGenerator::new(scenario.rate_per_min, scenario.duration_ms),
                arrivals: 0,
                throttled: 0,
                scale_events: Vec::new(),
                failures: Vec::new(),
                busy_signals: [0; 3],
            },
        };
        if let Some(t) = sim.st.load.next() {
            sim.schedule(hosts.ue, Msg::Arrival, t);
        }
        if scenario.autoscaler.headroom {
            sim.schedule(hosts.mgmt, Msg::HeadroomTick, scenario.autoscaler.headroom_period_ms);
        }
        if let Some(f) = &scenario.failure {
            sim.schedule_failure(f.at_ms, f.pouch.clone());
        }
        Ok(sim)
    }

    fn schedule(&mut self, host: HostId, msg: Msg, at: Millis) {
        let at = at.max(self.engine.now());
        self.engine.schedule(host, msg, at).expect("host is registered and time is not in the past");
    }

    /// Kills `host` (or the pouch with the most sessions) at `at`.
    pub fn schedule_failure(&mut self, at: Millis, host: Option<String>) {
        self.schedule(self.st.hosts.mgmt, Msg::FailPouch { host }, at);
    }

    /// Writes a new profile through the central HSS at `at`; holders get an invalidation.
    pub fn schedule_profile_update(&mut self, at: Millis, profile: SubscriberProfile) {
        self.schedule(self.st.hosts.hss, Msg::ProfileUpdate { profile }, at);
    }

    pub fn now(&self) -> Millis {
        self.engine.now()
    }

    pub fn live_calls(&self) -> u32 {
        self.st.live
    }

    pub fn pool(&self) -> &PouchPool {
        &self.st.pool
    }

    pub fn central_hss(&self) -> &CentralHss {
        &self.st.hss
    }

    pub fn management(&self) -> &ManagementUnit {
        &self.st.mgmt
    }

    pub fn rendezvous_lbs(&self) -> &[RendezvousLb] {
        &self.st.rlbs
    }

    /// States of every placed call that reached a pouch, by call index.
    pub fn session_states(&self) -> impl Iterator<Item = (u64, SessionState)> + '_ {
        self.st.calls.iter().filter_map(|c| c.session.as_ref().map(|s| (c.record.index, s.state())))
    }

    /// Runs every event up to and including `t`.
    pub fn run_until(&mut self, t: Millis) {
        let st = &mut self.st;
        self.engine.run_until(t, |eng, d| st.handle(eng, d));
    }

    /// Runs to the horizon, then lets calls in progress finish.
    ///
    /// Gives up `hold_ms + 600 s` after the horizon; calls still open then are reported unfinished.
    pub fn finish(&mut self) {
        let horizon = self.st.scenario.duration_ms;
        self.run_until(horizon.max(self.engine.now()));
        let limit = horizon + self.st.scenario.hold_ms + 600_000;
        while (self.st.live > 0 || self.engine.in_flight() > 0) && self.engine.now() < limit {
            let t = (self.engine.now() + 1_000).min(limit);
            self.run_until(t);
        }
    }

    pub fn run(mut self) -> MetricsReport {
        self.finish();
        self.into_report()
    }

    pub fn message_counters(&self) -> crate::sim::MessageCounters {
        self.engine.counters()
    }

    pub fn in_flight(&self) -> u64 {
        self.engine.in_flight()
    }

    pub fn into_report(mut self) -> MetricsReport {
        let st = self.st;
        let records: Vec<CallRecord> = st.calls.into_iter().map(|c| c.record).collect();
        let mut counters = Counters {
            arrivals: st.arrivals,
            throttled: st.throttled,
            placed: records.len() as u64,
            busy_signals_capacity: st.busy_signals[0],
            busy_signals_media: st.busy_signals[1],
            busy_signals_failure: st.busy_signals[2],
            central_queries: st.hss.query_count(),
            nodeset_version: st.mgmt.node_set().version(),
            peak_concurrency: st.peak,
            ..Counters::default()
        };
        for r in &records {
            match r.outcome {
                Some(CallOutcome::Established) => counters.established += 1,
                Some(CallOutcome::BusyCapacity) => counters.busy_capacity += 1,
                Some(CallOutcome::BusyMedia) => counters.busy_media += 1,
                Some(CallOutcome::PolicyRejected) => counters.policy_rejected += 1,
                Some(CallOutcome::DroppedFailure) => counters.dropped_failure += 1,
                None => counters.unfinished += 1,
            }
        }
        for p in st.pool.iter() {
            counters.cache_hits += p.cache.hits();
            counters.cache_misses += p.cache.misses();
        }
        for e in &st.scale_events {
            match e.kind {
                ScaleKind::Provision => counters.provisioning_events += 1,
                ScaleKind::Retire => counters.retirements += 1,
                ScaleKind::Fail => counters.failures += 1,
                ScaleKind::Active | ScaleKind::Drain => {}
            }
        }
        let m = self.engine.counters();
        counters.messages_sent = m.sent;
        counters.messages_delivered = m.delivered;
        counters.messages_dropped = m.dropped;

        let windows = window_stats(&records, st.scenario.metrics_window_ms, st.scenario.duration_ms);
        let mttr_samples = st.failures.iter().filter_map(FailureRecord::time_to_recovery).collect();
        MetricsReport {
            seed: st.seed,
            horizon_ms: st.scenario.duration_ms,
            end_ms: self.engine.now(),
            records,
            counters,
            windows,
            mttr_samples,
            failures: st.failures,
            scale_events: st.scale_events,
            busy_log: st.mgmt.busy_log().to_vec(),
            concurrency: st.concurrency,
            central_queries_by_subscriber: st.hss.queries_by_uri().clone(),
            rendezvous_versions: st.rlbs.iter().map(|lb| lb.node_set().version()).collect(),
            trace_digest: self.engine.trace_digest(),
            trace: self.engine.take_trace(),
        }
    }
}

fn send(eng: &mut Engine<Msg>, from: HostId, to: HostId, msg: Msg) {
    eng.send(from, to, msg).expect("registered hosts");
}

fn send_named(eng: &mut Engine<Msg>, from: &str, to: &str, msg: Msg) {
    eng.send_named(from, to, msg).expect("registered hosts");
}

impl State {
    fn handle(&mut self, eng: &mut Engine<Msg>, d: Dispatch<Msg>) {
        match d {
            Dispatch::Fired(ev) => {
                let at = match &ev.kind {
                    EventKind::Deliver { to, .. } => *to,
                    EventKind::Timer { host, .. } => *host,
                };
                let from = match &ev.kind {
                    EventKind::Deliver { from, .. } => *from,
                    EventKind::Timer { host, .. } => *host,
                };
                self.on_event(eng, from, at, ev.into_payload());
            }
            Dispatch::Dropped(ev) => {
                let to = match &ev.kind {
                    EventKind::Deliver { to, .. } => *to,
                    EventKind::Timer { host, .. } => *host,
                };
                if let Msg::Sip { call, msg } = ev.into_payload() {
                    if msg.method() == Some(Method::Invite) {
                        self.invite_lost(eng, call, to);
                    }
                }
            }
        }
    }

    fn call(&mut self, call: u64) -> &mut Call {
        &mut self.calls[(call - 1) as usize]
    }

    fn set_live(&mut self, now: Millis, live: u32) {
        self.live = live;
        self.peak = self.peak.max(live);
        match self.concurrency.last_mut() {
            Some((t, v)) if *t == now => *v = live,
            _ => self.concurrency.push((now, live)),
        }
    }

    fn on_event(&mut self, eng: &mut Engine<Msg>, from: HostId, at: HostId, msg: Msg) {
        let now = eng.now();
        match msg {
            Msg::Arrival => self.on_arrival(eng),
            Msg::Hangup { call } => {
                let c = self.call(call);
                let Some(s) = c.session.as_ref().filter(|s| s.state() == SessionState::Established) else { return };
                let c_host = String::from(s.host_of(ActorKind::C));
                let mut bye = c.invite.clone().with_method(Method::Bye);
                bye.cseq.seq = 2;
                if let Ok(to) = eng.host(&c_host) {
                    send(eng, at, to, Msg::Sip { call, msg: bye });
                }
            }
            Msg::Sip { call, msg } => self.on_sip(eng, at, call, msg),
            Msg::Actor { call, step } => self.on_actor(eng, at, call, step),
            Msg::ServiceDone { call, actor } => self.on_service_done(eng, call, actor),
            Msg::CacheReady { call } => {
                if self.call(call).is_running() {
                    self.continue_lookups(eng, call);
                }
            }
            Msg::HssQuery { uri } => {
                let pouch = String::from(eng.host_name(from));
                let q = self.scenario.hss.hss_query_latency_ms;
                eng.schedule_in(at, Msg::HssServe { pouch, uri }, q);
            }
            Msg::HssServe { pouch, uri } => {
                let holder_alive = self.pool.get(&pouch).is_some_and(|p| p.is_active());
                let profile = if holder_alive { self.hss.fetch_for(&pouch, &uri) } else { self.hss.central_lookup(&uri) };
                let to = eng.host(&pouch).expect("pouch host registered");
                send(eng, at, to, Msg::HssReply { uri, profile });
            }
            Msg::HssReply { uri, profile } => self.on_hss_reply(eng, at, uri, profile),
            Msg::Invalidate { uri, version } => {
                let host = String::from(eng.host_name(at));
                if let Some(p) = self.pool.get_mut(&host) {
                    p.cache.invalidate(&uri, version);
                }
            }
            Msg::ProfileUpdate { profile } => {
                let uri = profile.uri.clone();
                if let Ok((version, holders)) = self.hss.update_profile(&uri, profile) {
                    for h in holders {
                        if let Ok(to) = eng.host(&h) {
                            send(eng, at, to, Msg::Invalidate { uri: uri.clone(), version });
                        }
                    }
                }
            }
            Msg::Busy(signal) => self.on_busy(eng, signal),
            Msg::NodeSetPush(ns) => {
                if let Some(i) = self.rlb_hosts.iter().position(|h| *h == at) {
                    self.rlbs[i].install(ns);
                }
            }
            Msg::Activate { host } => {
                if let Some(p) = self.pool.get_mut(&host) {
                    if p.state() == PouchState::Provisioning {
                        p.activate(now);
                        let version = self.mgmt.pouch_active(&host).ok();
                        self.scale_event(eng, ScaleKind::Active, &host, None, version);
                        self.push_node_set(eng);
                    }
                }
            }
            Msg::HeadroomTick => self.on_headroom_tick(eng),
            Msg::FailPouch { host } => self.fail_pouch(eng, host),
        }
    }

    fn on_arrival(&mut self, eng: &mut Engine<Msg>) {
        let now = eng.now();
        if let Some(t) = self.load.next() {
            eng.schedule(self.hosts.ue, Msg::Arrival, t).expect("arrivals are monotone");
        }
        self.arrivals += 1;
        if should_throttle(self.live, self.scenario.max_concurrent) {
            self.throttled += 1;
            return;
        }
        let k = self.calls.len() as u64;
        let index = k + 1;
        let (a, b) = pair_for(k, self.population.len());
        let caller = self.population[a].clone();
        let callee = self.population[b].clone();
        let call_id = format!("c{index}");
        let mut invite = SipMessage::invite(&call_id, caller.clone(), callee.clone(), 1, None);
        invite.via = Some(String::from("SIP/2.0/UDP ue"));
        self.calls.push(Call {
            record: CallRecord {
                index,
                call_id,
                caller,
                callee,
                t_invite: now,
                outcome: None,
                latency_ms: None,
                pouch: None,
                concurrency_at_arrival: self.live,
            },
            invite: invite.clone(),
            session: None,
            orig_profile: None,
            callee_profile: None,
            counted_active: false,
            live: true,
        });
        self.set_live(now, self.live + 1);
        send(eng, self.hosts.ue, self.hosts.lb, Msg::Sip { call: index, msg: invite });
    }

    fn on_sip(&mut self, eng: &mut Engine<Msg>, at: HostId, call: u64, msg: SipMessage) {
        if at == self.hosts.ue {
            if msg.status() == Some(StatusCode::Ok) && msg.cseq.method == Method::Invite {
                self.on_established(eng, call);
            }
            return;
        }
        if at == self.hosts.lb {
            let rlb = match pick_rendezvous(&self.rlbs, &mut self.rr) {
                Ok(lb) => lb.id.clone(),
                Err(_) => return,
            };
            let to = eng.host(&rlb).expect("rlb registered");
            send(eng, at, to, Msg::Sip { call, msg });
            return;
        }
        if let Some(i) = self.rlb_hosts.iter().position(|h| *h == at) {
            match route_invite(&msg, &self.rlbs[i], &mut self.route_log) {
                Ok(decision) => {
                    let to = eng.host(&decision.target).expect("member registered");
                    send(eng, at, to, Msg::Sip { call, msg });
                }
                Err(HrwError::EmptyNodeSet) => {
                    let host = String::from(eng.host_name(at));
                    self.reject_busy(eng, at, call, &host, BusyKind::Capacity, CallOutcome::BusyCapacity);
                }
                Err(_) => {}
            }
            return;
        }
        // At a pouch: INVITE, ACK or BYE for the C actor.
        let host = String::from(eng.host_name(at));
        match msg.method() {
            Some(Method::Invite) => self.on_invite_at_pouch(eng, at, &host, call),
            Some(Method::Bye) => {
                let c = self.call(call);
                let Some(s) = c.session.as_mut() else { return };
                if s.on_bye() {
                    self.end_session(eng, call, None);
                    let ok = SipMessage::response_to(&msg, StatusCode::Ok);
                    send(eng, at, self.hosts.ue, Msg::Sip { call, msg: ok });
                }
            }
            _ => {}
        }
    }

    fn reject_busy(&mut self, eng: &mut Engine<Msg>, from: HostId, call: u64, pouch: &str, kind: BusyKind, outcome: CallOutcome) {
        let now = eng.now();
        let c = self.call(call);
        let busy = make_busy_response(&c.invite).expect("invite");
        let call_id = c.record.call_id.clone();
        self.finish_unsessioned(now, call, outcome);
        send(eng, from, self.hosts.ue, Msg::Sip { call, msg: busy });
        let signal = BusySignal { at: now, pouch: pouch.into(), call_id, kind };
        send(eng, from, self.hosts.mgmt, Msg::Busy(signal));
    }

    /// Resolves a call that never got a session.
    fn finish_unsessioned(&mut self, now: Millis, call: u64, outcome: CallOutcome) {
        let c = self.call(call);
        if !c.live {
            return;
        }
        c.live = false;
        c.record.outcome = Some(outcome);
        self.set_live(now, self.live - 1);
    }

    fn on_invite_at_pouch(&mut self, eng: &mut Engine<Msg>, at: HostId, host: &str, call: u64) {
        let admission = self.pool.get_mut(host).map(|p| p.admit());
        match admission {
            Some(Ok(Admission::Admitted)) => {
                let serving = self.pool.serving_hosts();
                let policy = self.scenario.placement;
                let c = self.call(call);
                let session = CallSession::on_invite(
                    &c.record.call_id,
                    c.record.caller.clone(),
                    c.record.callee.clone(),
                    host,
                    policy,
                    &serving,
                    c.record.t_invite,
                );
                c.record.pouch = Some(host.into());
                let trying = SipMessage::response_to(&c.invite, StatusCode::Trying);
                let units: Vec<(String, u64)> = session.actor_units().into_iter().map(|(h, n)| (String::from(h), n)).collect();
                c.session = Some(session);
                for (h, n) in units {
                    if let Some(p) = self.pool.get_mut(&h) {
                        p.add_load(n);
                    }
                }
                send(eng, at, self.hosts.ue, Msg::Sip { call, msg: trying });
                self.start_service(eng, call, ActorKind::C);
            }
            _ => {
                self.reject_busy(eng, at, call, host, BusyKind::Capacity, CallOutcome::BusyCapacity);
            }
        }
    }

    /// An INVITE was lost because its target went down in flight.
    fn invite_lost(&mut self, eng: &mut Engine<Msg>, call: u64, to: HostId) {
        let now = eng.now();
        let host = String::from(eng.host_name(to));
        let (outcome, kind) = match self.pool.get(&host).map(|p| p.state()) {
            Some(PouchState::Failed) => (CallOutcome::DroppedFailure, BusyKind::NodeFailure),
            _ => (CallOutcome::BusyCapacity, BusyKind::Capacity),
        };
        let c = self.call(call);
        let call_id = c.record.call_id.clone();
        self.finish_unsessioned(now, call, outcome);
        let signal = BusySignal { at: now, pouch: host, call_id, kind };
        send(eng, self.hosts.lb, self.hosts.mgmt, Msg::Busy(signal));
    }

    fn actor_host(&mut self, call: u64, kind: ActorKind) -> String {
        self.call(call).session.as_ref().map(|s| String::from(s.host_of(kind))).unwrap_or_default()
    }

    fn start_service(&mut self, eng: &mut Engine<Msg>, call: u64, actor: ActorKind) {
        let host = self.actor_host(call, actor);
        let own = self.call(call).session.as_ref().map_or(0, |s| s.actor_units().iter().find(|(h, _)| *h == host).map_or(0, |x| x.1));
        let Some(p) = self.pool.get(&host) else { return };
        let delay = p.service_time_excluding(own);
        let id = eng.host(&host).expect("pouch registered");
        eng.schedule_in(id, Msg::ServiceDone { call, actor }, delay);
    }

    fn actor_send(&mut self, eng: &mut Engine<Msg>, call: u64, from: ActorKind, to: ActorKind, step: ActorStep) {
        let a = self.actor_host(call, from);
        let b = self.actor_host(call, to);
        send_named(eng, &a, &b, Msg::Actor { call, step });
    }

    fn advance(&mut self, call: u64, to: SessionState) {
        if let Some(s) = self.call(call).session.as_mut() {
            s.advance(to).expect("actor chain follows the session state machine");
        }
    }

    fn on_service_done(&mut self, eng: &mut Engine<Msg>, call: u64, actor: ActorKind) {
        if !self.call(call).is_running() {
            return;
        }
        match actor {
            ActorKind::C => {
                self.advance(call, SessionState::Orchestrating);
                self.actor_send(eng, call, ActorKind::C, ActorKind::O, ActorStep::Create);
            }
            ActorKind::O => self.actor_send(eng, call, ActorKind::O, ActorKind::H, ActorStep::ProfileQuery),
            ActorKind::H => self.continue_lookups(eng, call),
            ActorKind::A => {
                self.advance(call, SessionState::Anchored);
                self.actor_send(eng, call, ActorKind::A, ActorKind::T, ActorStep::Telephony);
            }
            ActorKind::T => {
                self.advance(call, SessionState::TelephonyReady);
                self.actor_send(eng, call, ActorKind::T, ActorKind::M, ActorStep::Media);
            }
            ActorKind::M => {
                let host = self.actor_host(call, ActorKind::M);
                let reserved = self.pool.get_mut(&host).is_some_and(|p| p.reserve_media());
                if reserved {
                    if let Some(s) = self.call(call).session.as_mut() {
                        s.media_reserved = true;
                    }
                    self.advance(call, SessionState::MediaAllocated);
                    self.actor_send(eng, call, ActorKind::M, ActorKind::C, ActorStep::MediaReady);
                } else {
                    let now = eng.now();
                    let call_id = self.call(call).record.call_id.clone();
                    self.end_session(eng, call, Some(DropReason::MediaUnavailable));
                    let from = eng.host(&host).expect("pouch registered");
                    let signal = BusySignal { at: now, pouch: host, call_id, kind: BusyKind::Media };
                    send(eng, from, self.hosts.mgmt, Msg::Busy(signal));
                    self.actor_send(eng, call, ActorKind::M, ActorKind::C, ActorStep::Reject);
                }
            }
        }
    }

    fn on_actor(&mut self, eng: &mut Engine<Msg>, at: HostId, call: u64, step: ActorStep) {
        match step {
            ActorStep::Reject => {
                let c = self.call(call);
                let busy = make_busy_response(&c.invite).expect("invite");
                send(eng, at, self.hosts.ue, Msg::Sip { call, msg: busy });
            }
            _ if !self.call(call).is_running() => {}
            ActorStep::Create => self.start_service(eng, call, ActorKind::O),
            ActorStep::ProfileQuery => self.start_service(eng, call, ActorKind::H),
            ActorStep::Anchor => self.start_service(eng, call, ActorKind::A),
            ActorStep::Telephony => self.start_service(eng, call, ActorKind::T),
            ActorStep::Media => self.start_service(eng, call, ActorKind::M),
            ActorStep::ProfileReply => self.on_profiles(eng, call),
            ActorStep::MediaReady => {
                let c = self.call(call);
                let ok = SipMessage::response_to(&c.invite, StatusCode::Ok);
                send(eng, at, self.hosts.ue, Msg::Sip { call, msg: ok });
            }
        }
    }

    /// H's lookup loop: originator first, then callee, each through the local cache.
    fn continue_lookups(&mut self, eng: &mut Engine<Msg>, call: u64) {
        let Some(uri) = self.call(call).next_lookup().cloned() else {
            self.actor_send(eng, call, ActorKind::H, ActorKind::O, ActorStep::ProfileReply);
            return;
        };
        let host = self.actor_host(call, ActorKind::H);
        let key = (host.clone(), uri.clone());
        let Some(pouch) = self.pool.get_mut(&host) else { return };
        if let Some(waiters) = self.pending_fetch.get_mut(&key) {
            pouch.cache.record_coalesced_hit();
            waiters.push(call);
            return;
        }
        let id = eng.host(&host).expect("pouch registered");
        match pouch.cache.lookup(&uri) {
            Some(profile) => {
                self.store_profile(call, Ok(profile));
                eng.schedule_in(id, Msg::CacheReady { call }, self.scenario.hss.local_cache_latency_ms);
            }
            None => {
                self.pending_fetch.insert(key, vec![call]);
                send(eng, id, self.hosts.hss, Msg::HssQuery { uri });
            }
        }
    }

    fn store_profile(&mut self, call: u64, profile: Result<SubscriberProfile, HssError>) {
        let c = self.call(call);
        if c.orig_profile.is_none() {
            c.orig_profile = Some(profile);
        } else {
            c.callee_profile = Some(profile);
        }
    }

    fn on_hss_reply(&mut self, eng: &mut Engine<Msg>, at: HostId, uri: SipUri, profile: Result<SubscriberProfile, HssError>) {
        let host = String::from(eng.host_name(at));
        if let (Some(p), Ok(profile)) = (self.pool.get_mut(&host), &profile) {
            if p.is_active() {
                p.cache.insert(profile.clone());
            }
        }
        let waiters = self.pending_fetch.remove(&(host, uri)).unwrap_or_default();
        for call in waiters {
            if self.call(call).is_running() {
                self.store_profile(call, profile.clone());
                self.continue_lookups(eng, call);
            }
        }
    }

    fn on_profiles(&mut self, eng: &mut Engine<Msg>, call: u64) {
        let c = &self.calls[(call - 1) as usize];
        let active = self.active_calls.get(&c.record.caller).copied().unwrap_or(0);
        let verdict = match (&c.orig_profile, &c.callee_profile) {
            (Some(o), Some(e)) => check_subscription(o.as_ref(), e.as_ref(), active),
            _ => return,
        };
        match verdict {
            Ok(()) => {
                self.advance(call, SessionState::ProfileFetched);
                let caller = self.call(call).record.caller.clone();
                *self.active_calls.entry(caller).or_default() += 1;
                self.call(call).counted_active = true;
                self.actor_send(eng, call, ActorKind::O, ActorKind::A, ActorStep::Anchor);
            }
            Err(reason) => {
                self.end_session(eng, call, Some(DropReason::Policy(reason)));
                self.actor_send(eng, call, ActorKind::O, ActorKind::C, ActorStep::Reject);
            }
        }
    }

    fn on_established(&mut self, eng: &mut Engine<Msg>, call: u64) {
        let now = eng.now();
        let hold = self.scenario.hold_ms;
        let c = self.call(call);
        let Some(s) = c.session.as_mut() else { return };
        if s.state() != SessionState::MediaAllocated {
            return;
        }
        s.establish(now).expect("media allocated");
        let latency = s.latency();
        let c_host = String::from(s.host_of(ActorKind::C));
        c.record.outcome = Some(CallOutcome::Established);
        c.record.latency_ms = latency;
        let ack = c.invite.clone().with_method(Method::Ack);
        let (caller, t_invite) = (c.record.caller.clone(), c.record.t_invite);
        for f in &mut self.failures {
            if f.recovered_at.is_none() && t_invite >= f.at && f.affected.contains(&caller) {
                f.recovered_at = Some(now);
            }
        }
        let ue = self.hosts.ue;
        if let Ok(to) = eng.host(&c_host) {
            send(eng, ue, to, Msg::Sip { call, msg: ack });
        }
        eng.schedule_in(ue, Msg::Hangup { call }, hold);
    }

    /// Ends a running session: `None` for a normal termination, otherwise a drop.
    fn end_session(&mut self, eng: &mut Engine<Msg>, call: u64, drop: Option<DropReason>) {
        let now = eng.now();
        let c = &mut self.calls[(call - 1) as usize];
        let Some(s) = c.session.as_mut() else { return };
        match drop {
            None => s.finish_termination(now).expect("terminating"),
            Some(r) => s.advance(SessionState::Dropped(r)).expect("drop from a live state"),
        }
        if let Some(r) = drop {
            c.record.outcome = Some(match r {
                DropReason::Policy(_) => CallOutcome::PolicyRejected,
                DropReason::MediaUnavailable => CallOutcome::BusyMedia,
                DropReason::NodeFailure => CallOutcome::DroppedFailure,
            });
            c.record.latency_ms = None;
        }
        let units: Vec<(String, u64)> = s.actor_units().into_iter().map(|(h, n)| (String::from(h), n)).collect();
        let c_host = String::from(s.host_of(ActorKind::C));
        let m_host = String::from(s.host_of(ActorKind::M));
        let media = core::mem::take(&mut s.media_reserved);
        if core::mem::take(&mut c.counted_active) {
            if let Some(n) = self.active_calls.get_mut(&c.record.caller) {
                *n = n.saturating_sub(1);
            }
        }
        let was_live = core::mem::take(&mut c.live);
        for (h, n) in &units {
            if let Some(p) = self.pool.get_mut(h) {
                if p.is_active() {
                    p.remove_load(*n);
                }
            }
        }
        if let Some(p) = self.pool.get_mut(&c_host) {
            if p.is_active() {
                p.release_session();
            }
        }
        if media {
            if let Some(p) = self.pool.get_mut(&m_host) {
                if p.is_active() {
                    p.release_media();
                }
            }
        }
        if was_live {
            self.set_live(now, self.live - 1);
        }
        for (h, _) in units {
            self.maybe_retire(eng, &h);
        }
    }

    fn on_busy(&mut self, eng: &mut Engine<Msg>, signal: BusySignal) {
        let now = eng.now();
        self.busy_signals[signal.kind as usize] += 1;
        let provisioning = self.pool.count(PouchState::Provisioning) as u32;
        let allocated = self.allocated();
        if let Some(action) = self.mgmt.on_busy(signal, now, provisioning, allocated) {
            self.execute(eng, action);
        }
    }

    /// Serving plus provisioning pouches.
    fn allocated(&self) -> u32 {
        (self.pool.serving_hosts().len() + self.pool.count(PouchState::Provisioning)) as u32
    }

    fn execute(&mut self, eng: &mut Engine<Msg>, action: ScaleAction) {
        let now = eng.now();
        match action {
            ScaleAction::Provision { reason } => {
                let host = self.pool.next_host_name();
                let active_at = self.pool.provision(&host, &self.scenario.pouch, now).expect("fresh host name");
                eng.register_host(&host).expect("fresh host name");
                eng.schedule(self.hosts.mgmt, Msg::Activate { host: host.clone() }, active_at).expect("future");
                self.scale_event(eng, ScaleKind::Provision, &host, Some(reason), None);
            }
            ScaleAction::Drain { host } => {
                let Some(p) = self.pool.get_mut(&host) else { return };
                if !p.is_serving() {
                    return;
                }
                p.start_draining();
                let version = self.mgmt.pouch_draining(&host).ok();
                self.scale_event(eng, ScaleKind::Drain, &host, None, version);
                self.push_node_set(eng);
                self.maybe_retire(eng, &host);
            }
        }
    }

    fn maybe_retire(&mut self, eng: &mut Engine<Msg>, host: &str) {
        let Some(p) = self.pool.get_mut(host) else { return };
        if !(p.is_active() && p.is_draining() && p.active_sessions() == 0 && p.load_units() == 0) {
            return;
        }
        p.retire();
        self.hss.forget_pouch(host);
        self.pending_fetch.retain(|(h, _), _| h != host);
        let id = eng.host(host).expect("pouch registered");
        eng.set_down(id);
        self.scale_event(eng, ScaleKind::Retire, host, None, None);
    }

    fn scale_event(&mut self, eng: &mut Engine<Msg>, kind: ScaleKind, host: &str, reason: Option<ScaleReason>, version: Option<u64>) {
        let at = eng.now();
        let why = reason.map_or("", ScaleReason::as_str);
        eng.note("scale", "mgmt", host, format_args!("{} {}", kind.as_str(), why));
        self.scale_events.push(ScaleEvent { at, kind, host: host.into(), reason, nodeset_version: version });
    }

    fn push_node_set(&mut self, eng: &mut Engine<Msg>) {
        let ns = self.mgmt.node_set().clone();
        eng.note("nodeset", "mgmt", "rlb", format_args!("v{} {}", ns.version(), ns.members().join(",")));
        for i in 0..self.rlb_hosts.len() {
            send(eng, self.hosts.mgmt, self.rlb_hosts[i], Msg::NodeSetPush(ns.clone()));
        }
    }

    fn on_headroom_tick(&mut self, eng: &mut Engine<Msg>) {
        let now = eng.now();
        let cfg = *self.mgmt.config();
        let serving: Vec<PouchLoad> = self
            .pool
            .iter()
            .filter(|p| p.is_serving())
            .map(|p| PouchLoad { host: p.host.clone(), utilization: p.utilization() })
            .collect();
        let view = PoolView {
            provisioning: self.pool.count(PouchState::Provisioning) as u32,
            total_sessions: self.pool.iter().filter(|p| p.is_active()).map(|p| p.active_sessions() as u64).sum(),
            capacity_sessions: self.scenario.pouch.capacity_sessions,
            serving,
        };
        let since = now.saturating_sub(cfg.headroom_period_ms);
        let inputs = QosInputs {
            mean_rtt_ms: self.scenario.transport.base_hop_latency_ms as f64 * 2.0,
            utilizations: view.serving.iter().map(|p| p.utilization).collect(),
            recent_latencies: self
                .calls
                .iter()
                .filter_map(|c| {
                    let s = c.session.as_ref()?;
                    let t = s.t_established?;
                    (t > since).then_some(c.record.latency_ms).flatten()
                })
                .collect(),
        };
        self.mgmt.set_qos_recommendation(qos_trigger(&inputs, cfg.latency_slo_ms, cfg.high_util_threshold));
        for action in self.mgmt.enforce_headroom(now, &view) {
            self.execute(eng, action);
        }
        let next = now + cfg.headroom_period_ms;
        if next < self.scenario.duration_ms {
            eng.schedule(self.hosts.mgmt, Msg::HeadroomTick, next).expect("future");
        }
    }

    fn fail_pouch(&mut self, eng: &mut Engine<Msg>, host: Option<String>) {
        let now = eng.now();
        let host = match host {
            Some(h) => h,
            None => {
                // Busiest serving pouch; first by creation order on ties.
                let mut best: Option<(u32, String)> = None;
                for p in self.pool.iter().filter(|p| p.is_active()) {
                    if best.as_ref().is_none_or(|(n, _)| p.active_sessions() > *n) {
                        best = Some((p.active_sessions(), p.host.clone()));
                    }
                }
                match best {
                    Some((_, h)) => h,
                    None => return,
                }
            }
        };
        let Some(p) = self.pool.get_mut(&host) else { return };
        if !p.is_active() {
            return;
        }
        p.fail();
        let id = eng.host(&host).expect("pouch registered");
        eng.set_down(id);
        self.hss.forget_pouch(&host);
        self.pending_fetch.retain(|(h, _), _| *h != host);

        let allocated = self.allocated();
        let (version, replace) = self.mgmt.pouch_failed(&host, allocated);
        self.scale_event(eng, ScaleKind::Fail, &host, None, version);
        if version.is_some() {
            self.push_node_set(eng);
        }
        if let Some(action) = replace {
            self.execute(eng, action);
        }

        let victims: Vec<u64> = self
            .calls
            .iter()
            .filter(|c| c.is_running() && c.session.as_ref().is_some_and(|s| s.touches(&host)))
            .map(|c| c.record.index)
            .collect();
        let mut affected: BTreeSet<SipUri> = BTreeSet::new();
        for &call in &victims {
            self.end_session(eng, call, Some(DropReason::NodeFailure));
            let c = self.call(call);
            affected.insert(c.record.caller.clone());
            let signal = BusySignal { at: now, pouch: host.clone(), call_id: c.record.call_id.clone(), kind: BusyKind::NodeFailure };
            send(eng, self.hosts.lb, self.hosts.mgmt, Msg::Busy(signal));
        }
        self.failures.push(FailureRecord {
            at: now,
            host,
            dropped_sessions: victims.len() as u64,
            affected: affected.into_iter().collect(),
            recovered_at: None,
        });
    }
}
