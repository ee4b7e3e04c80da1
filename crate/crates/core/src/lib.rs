//! Deterministic simulation core for a micro-service IMS testbed.
//!
//! Each call gets its own set of six actors placed on pouches. Rendezvous
//! hashing keeps a subscriber on the pouch that caches their profile. A
//! management unit grows and shrinks the pouch pool from busy signals and a
//! headroom policy. Everything runs on a virtual millisecond clock.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autoscaler;
pub mod hrw;
pub mod hss;
pub mod metrics;
pub mod pouch;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod sip;
pub mod stats;
pub mod world;

pub use autoscaler::{AutoscalerConfig, BusyKind, BusySignal, ManagementUnit};
pub use hrw::{hash64, select_node, NodeSet, RendezvousLb};
pub use hss::{CentralHss, LocalCache, SubscriberProfile};
pub use metrics::{CallOutcome, CallRecord, Counters, MetricsReport};
pub use pouch::{PouchConfig, PouchDescriptor, PouchState};
pub use scenario::{ConfigError, Scenario, ScenarioKind};
pub use session::{CallSession, PlacementPolicy, SessionState};
pub use sim::{Engine, Millis, TransportConfig};
pub use sip::{parse, SipError, SipMessage, SipUri};
pub use world::{run_scenario, Simulation};
