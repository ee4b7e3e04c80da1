//! Per-call micro services and the call-session state machine.
//!
//! Every call gets its own C, O, A, T, M and H actor. The happy path is
//!
//! ```text
//! Created -> Orchestrating -> ProfileFetched -> Anchored -> TelephonyReady
//!         -> MediaAllocated -> Established -> Terminating -> Terminated
//! ```
//!
//! and any state before `Established` may end in `Dropped`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::hss::{HssError, SubscriberProfile};
use crate::sim::Millis;
use crate::sip::SipUri;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorKind {
    C,
    O,
    A,
    T,
    M,
    H,
}

impl ActorKind {
    pub const ALL: [ActorKind; 6] = [ActorKind::C, ActorKind::O, ActorKind::A, ActorKind::T, ActorKind::M, ActorKind::H];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            ActorKind::C => 'C',
            ActorKind::O => 'O',
            ActorKind::A => 'A',
            ActorKind::T => 'T',
            ActorKind::M => 'M',
            ActorKind::H => 'H',
        }
    }
}

impl fmt::Display for ActorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyReason {
    UnknownCallee,
    UnknownOriginator,
    TooManyCalls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    Policy(PolicyReason),
    MediaUnavailable,
    NodeFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SessionState {
    Created,
    Orchestrating,
    ProfileFetched,
    Anchored,
    TelephonyReady,
    MediaAllocated,
    Established,
    Terminating,
    Terminated,
    Dropped(DropReason),
}

impl SessionState {
    fn rank(self) -> u8 {
        match self {
            SessionState::Created => 0,
            SessionState::Orchestrating => 1,
            SessionState::ProfileFetched => 2,
            SessionState::Anchored => 3,
            SessionState::TelephonyReady => 4,
            SessionState::MediaAllocated => 5,
            SessionState::Established => 6,
            SessionState::Terminating => 7,
            SessionState::Terminated => 8,
            SessionState::Dropped(_) => 9,
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, SessionState::Terminated | SessionState::Dropped(_))
    }

    pub fn is_established(self) -> bool {
        matches!(self, SessionState::Established | SessionState::Terminating)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: SessionState, to: SessionState },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PlacementPolicy {
    #[default]
    CoLocated,
    Spread,
}

/// Host of each actor, in [`ActorKind::ALL`] order.
pub fn place_actors(policy: PlacementPolicy, c_host: &str, serving: &[String]) -> [String; 6] {
    let mut out: [String; 6] = Default::default();
    out[ActorKind::C.index()] = c_host.into();
    let rest = [ActorKind::O, ActorKind::A, ActorKind::T, ActorKind::M, ActorKind::H];
    match policy {
        PlacementPolicy::Spread if !serving.is_empty() => {
            let start = serving.iter().position(|h| h == c_host).map_or(0, |i| i + 1);
            for (k, kind) in rest.into_iter().enumerate() {
                out[kind.index()] = serving[(start + k) % serving.len()].clone();
            }
        }
        _ => {
            for kind in rest {
                out[kind.index()] = c_host.into();
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSession {
    pub call_id: String,
    pub originator: SipUri,
    pub callee: SipUri,
    state: SessionState,
    pub assignments: [String; 6],
    pub t_invite_sent: Millis,
    pub t_established: Option<Millis>,
    pub t_terminated: Option<Millis>,
    pub media_reserved: bool,
}

impl CallSession {
    /// C has been instantiated on `target`.
    pub fn on_invite(
        call_id: &str,
        originator: SipUri,
        callee: SipUri,
        target: &str,
        policy: PlacementPolicy,
        serving: &[String],
        t_invite_sent: Millis,
    ) -> Self {
        Self {
            call_id: call_id.into(),
            originator,
            callee,
            state: SessionState::Created,
            assignments: place_actors(policy, target, serving),
            t_invite_sent,
            t_established: None,
            t_terminated: None,
            media_reserved: false,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn host_of(&self, kind: ActorKind) -> &str {
        &self.assignments[kind.index()]
    }

    pub fn touches(&self, host: &str) -> bool {
        self.assignments.iter().any(|h| h == host)
    }

    /// Distinct hosts with the number of actors each carries.
    pub fn actor_units(&self) -> Vec<(&str, u64)> {
        let mut out: Vec<(&str, u64)> = Vec::new();
        for h in &self.assignments {
            match out.iter_mut().find(|(x, _)| x == h) {
                Some((_, n)) => *n += 1,
                None => out.push((h.as_str(), 1)),
            }
        }
        out
    }

    pub fn advance(&mut self, to: SessionState) -> Result<(), SessionError> {
        let from = self.state;
        let ok = match to {
            SessionState::Dropped(DropReason::NodeFailure) => !from.is_final(),
            SessionState::Dropped(_) => from.rank() < SessionState::Established.rank(),
            _ => to.rank() == from.rank() + 1,
        };
        if !ok {
            return Err(SessionError::IllegalTransition { from, to });
        }
        self.state = to;
        Ok(())
    }

    pub fn establish(&mut self, now: Millis) -> Result<(), SessionError> {
        self.advance(SessionState::Established)?;
        self.t_established = Some(now);
        Ok(())
    }

    pub fn latency(&self) -> Option<Millis> {
        self.t_established.map(|t| t - self.t_invite_sent)
    }

    /// Handles a BYE. Returns `false` when the BYE is a duplicate and was ignored.
    pub fn on_bye(&mut self) -> bool {
        match self.state {
            SessionState::Established => {
                self.state = SessionState::Terminating;
                true
            }
            _ => false,
        }
    }

    pub fn finish_termination(&mut self, now: Millis) -> Result<(), SessionError> {
        self.advance(SessionState::Terminated)?;
        self.t_terminated = Some(now);
        Ok(())
    }
}

/// Subscription check performed by O on the profiles H returned.
pub fn check_subscription(
    originator: Result<&SubscriberProfile, &HssError>,
    callee: Result<&SubscriberProfile, &HssError>,
    originator_active_calls: u32,
) -> Result<(), PolicyReason> {
    let orig = originator.map_err(|_| PolicyReason::UnknownOriginator)?;
    callee.map_err(|_| PolicyReason::UnknownCallee)?;
    if originator_active_calls >= orig.max_concurrent_calls {
        return Err(PolicyReason::TooManyCalls);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn uri(u: &str) -> SipUri {
        SipUri::new(u, "ims.test").unwrap()
    }

    fn session(policy: PlacementPolicy) -> CallSession {
        let serving: Vec<String> = (0..8).map(|i| format!("p{i}")).collect();
        CallSession::on_invite("c1", uri("alice"), uri("bob"), "p2", policy, &serving, 0)
    }

    #[test]
    fn co_located_places_everything_on_target() {
        let s = session(PlacementPolicy::CoLocated);
        assert_eq!(s.state(), SessionState::Created);
        assert!(s.assignments.iter().all(|h| h == "p2"));
        assert_eq!(s.actor_units(), [("p2", 6)]);
    }

    #[test]
    fn spread_round_robins_after_target() {
        let s = session(PlacementPolicy::Spread);
        let hosts: Vec<&str> = ActorKind::ALL.iter().map(|k| s.host_of(*k)).collect();
        assert_eq!(hosts, ["p2", "p3", "p4", "p5", "p6", "p7"]);
        let serving: Vec<String> = ["p0", "p1"].map(String::from).to_vec();
        let s = CallSession::on_invite("c", uri("a"), uri("b"), "p1", PlacementPolicy::Spread, &serving, 0);
        assert_eq!(s.actor_units(), [("p1", 3), ("p0", 3)]);
    }

    #[test]
    fn happy_path_and_termination() {
        let mut s = session(PlacementPolicy::CoLocated);
        for st in [
            SessionState::Orchestrating,
            SessionState::ProfileFetched,
            SessionState::Anchored,
            SessionState::TelephonyReady,
            SessionState::MediaAllocated,
        ] {
            s.advance(st).unwrap();
        }
        s.establish(2_000).unwrap();
        assert_eq!(s.latency(), Some(2_000));
        assert!(s.on_bye());
        assert!(!s.on_bye());
        s.finish_termination(302_000).unwrap();
        assert!(!s.on_bye());
        assert_eq!(s.state(), SessionState::Terminated);
    }

    #[test]
    fn skipping_states_is_illegal() {
        let mut s = session(PlacementPolicy::CoLocated);
        assert!(s.advance(SessionState::Anchored).is_err());
        assert!(s.establish(5).is_err());
    }

    #[test]
    fn drops() {
        let mut s = session(PlacementPolicy::CoLocated);
        s.advance(SessionState::Orchestrating).unwrap();
        s.advance(SessionState::Dropped(DropReason::Policy(PolicyReason::TooManyCalls))).unwrap();
        assert!(s.state().is_final());
        assert!(s.advance(SessionState::Dropped(DropReason::NodeFailure)).is_err());

        let mut s = session(PlacementPolicy::CoLocated);
        for st in [
            SessionState::Orchestrating,
            SessionState::ProfileFetched,
            SessionState::Anchored,
            SessionState::TelephonyReady,
            SessionState::MediaAllocated,
        ] {
            s.advance(st).unwrap();
        }
        s.establish(1).unwrap();
        assert!(s.advance(SessionState::Dropped(DropReason::MediaUnavailable)).is_err());
        s.advance(SessionState::Dropped(DropReason::NodeFailure)).unwrap();
    }

    #[test]
    fn subscription_policy() {
        let alice = SubscriberProfile::voice(uri("alice"), "A", 2);
        let bob = SubscriberProfile::voice(uri("bob"), "B", 2);
        assert_eq!(check_subscription(Ok(&alice), Ok(&bob), 0), Ok(()));
        let one = SubscriberProfile::voice(uri("alice"), "A", 1);
        assert_eq!(check_subscription(Ok(&one), Ok(&bob), 1), Err(PolicyReason::TooManyCalls));
        let missing = HssError::UnknownSubscriber(uri("carol"));
        assert_eq!(check_subscription(Ok(&alice), Err(&missing), 0), Err(PolicyReason::UnknownCallee));
    }
}
