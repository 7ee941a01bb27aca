//! Hand-proximity detection and the pairwise touch-session state machine.
//!
//! Each agent keeps its own replica of the session with every peer. A session
//! only connects when both sides detect proximity and exchange a proposal or
//! acceptance; the session id is the minimum proposal tick so both replicas
//! agree on it.

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::model::{AgentId, Tick};

/// Slack for comparing durations derived from tick counts.
pub const TIME_EPS: f64 = 1e-9;

/// Total handshake transmissions (first send plus retries) per attempt.
pub const MAX_HANDSHAKE_SENDS: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProximityConfig {
    /// meters
    pub enter_dist: f64,
    /// meters
    pub exit_dist: f64,
    /// seconds
    pub stale_timeout: f64,
    /// seconds
    pub propose_window: f64,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self {
            enter_dist: 0.10,
            exit_dist: 0.15,
            stale_timeout: 0.3,
            propose_window: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProximityConfigError {
    #[error("need 0 < enter_dist < exit_dist, got {enter} and {exit}")]
    Band { enter: f64, exit: f64 },
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
}

impl ProximityConfig {
    pub fn validate(&self) -> Result<(), ProximityConfigError> {
        if !(self.enter_dist > 0.0 && self.enter_dist < self.exit_dist) {
            return Err(ProximityConfigError::Band {
                enter: self.enter_dist,
                exit: self.exit_dist,
            });
        }
        if self.stale_timeout <= 0.0 {
            return Err(ProximityConfigError::NonPositive("stale_timeout"));
        }
        if self.propose_window <= 0.0 {
            return Err(ProximityConfigError::NonPositive("propose_window"));
        }
        Ok(())
    }

    /// Proposal window in whole ticks.
    pub fn window_ticks(&self, dt: f64) -> Tick {
        ((self.propose_window / dt).round() as Tick).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityEvent {
    Enter,
    Within,
    Exit,
    Stale,
}

/// Classifies the hand distance to a peer. `remote` is the peer's last known
/// hand position and its age in seconds, `None` if never received.
pub fn detect(
    local_hand: DVec3,
    remote: Option<(DVec3, f64)>,
    cfg: &ProximityConfig,
    connected: bool,
) -> ProximityEvent {
    let Some((remote_hand, age)) = remote else {
        return ProximityEvent::Stale;
    };
    if age > cfg.stale_timeout + TIME_EPS {
        return ProximityEvent::Stale;
    }
    let dist = local_hand.distance(remote_hand);
    if !connected && dist < cfg.enter_dist {
        ProximityEvent::Enter
    } else if connected && dist > cfg.exit_dist {
        ProximityEvent::Exit
    } else {
        ProximityEvent::Within
    }
}

/// Deterministic session identity: the unordered pair plus the agreed start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId {
    pub low: AgentId,
    pub high: AgentId,
    pub start: Tick,
}

impl SessionId {
    pub fn new(a: AgentId, b: AgentId, start: Tick) -> Self {
        Self {
            low: a.min(b),
            high: a.max(b),
            start,
        }
    }

    pub fn involves(&self, a: AgentId, b: AgentId) -> bool {
        self.low == a.min(b) && self.high == a.max(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Proposed { since: Tick },
    Connected { since: Tick, locus: DVec3 },
    Released { at: Tick },
}

impl SessionState {
    pub fn label(&self) -> &'static str {
        match self {
            SessionState::Idle => "idle",
            SessionState::Proposed { .. } => "proposed",
            SessionState::Connected { .. } => "connected",
            SessionState::Released { .. } => "released",
        }
    }

    pub fn is_connected(&self) -> bool {
        matches!(self, SessionState::Connected { .. })
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, SessionState::Idle)
    }
}

/// Handshake traffic between the two replicas of one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Handshake {
    Propose { session: SessionId, locus: DVec3, tick: Tick },
    Accept { session: SessionId, tick: Tick },
    Release { session: SessionId, tick: Tick },
}

impl Handshake {
    pub fn session(&self) -> SessionId {
        match self {
            Handshake::Propose { session, .. }
            | Handshake::Accept { session, .. }
            | Handshake::Release { session, .. } => *session,
        }
    }
}

/// One agent's replica of its session with one peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchSession {
    pub local: AgentId,
    pub peer: AgentId,
    /// Set while the session is not idle.
    pub id: Option<SessionId>,
    pub state: SessionState,
    /// Geometry factor of the lower-id agent as receiver.
    pub g_a: f64,
    /// Geometry factor of the higher-id agent as receiver.
    pub g_b: f64,
    pub(crate) sends: u8,
    pub(crate) last_send: Tick,
    pub(crate) last_enter: Tick,
    pub(crate) acked: bool,
    /// Set after an unanswered proposal; cleared once the hands leave the
    /// entry radius.
    pub(crate) rearm_required: bool,
    pub(crate) proposal_locus: DVec3,
}

/// Everything the state machine sees in one tick.
#[derive(Debug, Clone, Copy)]
pub struct SessionInput<'a> {
    pub event: ProximityEvent,
    pub peer_msgs: &'a [Handshake],
    pub now: Tick,
    /// Midpoint of the two last-known hand positions.
    pub locus: DVec3,
    pub peer_mask_returned: bool,
    pub window_ticks: Tick,
}

impl TouchSession {
    pub fn new(local: AgentId, peer: AgentId) -> Self {
        Self {
            local,
            peer,
            id: None,
            state: SessionState::Idle,
            g_a: 1.0,
            g_b: 1.0,
            sends: 0,
            last_send: 0,
            last_enter: 0,
            acked: false,
            rearm_required: false,
            proposal_locus: DVec3::ZERO,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.state.is_connected()
    }

    /// Geometry factor this replica's owner uses as a receiver.
    pub fn local_g(&self) -> f64 {
        if self.local < self.peer {
            self.g_a
        } else {
            self.g_b
        }
    }

    pub fn set_geometry(&mut self, local_g: f64, peer_g: f64) {
        if self.local < self.peer {
            self.g_a = local_g;
            self.g_b = peer_g;
        } else {
            self.g_a = peer_g;
            self.g_b = local_g;
        }
    }

    pub fn sends(&self) -> u8 {
        self.sends
    }

    fn go_idle(&mut self) {
        self.state = SessionState::Idle;
        self.id = None;
        self.sends = 0;
        self.acked = false;
    }

    fn connect(&mut self, id: SessionId, input: &SessionInput<'_>, acked: bool) -> Handshake {
        self.id = Some(id);
        self.state = SessionState::Connected {
            since: input.now,
            locus: input.locus,
        };
        self.sends = 1;
        self.last_send = input.now;
        self.acked = acked;
        self.rearm_required = false;
        Handshake::Accept {
            session: id,
            tick: input.now,
        }
    }

    fn release(&mut self, now: Tick) -> Option<Handshake> {
        self.state = SessionState::Released { at: now };
        self.id.map(|session| Handshake::Release { session, tick: now })
    }

    /// Forces release regardless of proximity, e.g. when either side returns
    /// its mask. Idle and proposed sessions simply go idle.
    pub fn force_release(&mut self, now: Tick) -> Option<Handshake> {
        match self.state {
            SessionState::Connected { .. } => self.release(now),
            SessionState::Proposed { .. } => {
                self.go_idle();
                None
            }
            _ => None,
        }
    }

    /// First peer proposal or acceptance for this pair, if any.
    fn peer_offer(&self, msgs: &[Handshake]) -> Option<Handshake> {
        msgs.iter()
            .copied()
            .find(|m| {
                matches!(m, Handshake::Propose { .. } | Handshake::Accept { .. })
                    && m.session().involves(self.local, self.peer)
            })
    }

    /// Advances the replica by one tick and returns the messages to send to
    /// the peer.
    pub fn step(&mut self, input: &SessionInput<'_>) -> Vec<Handshake> {
        let now = input.now;
        let mut out = Vec::new();
        for m in input.peer_msgs {
            if !m.session().involves(self.local, self.peer) {
                debug!(local = %self.local, peer = %self.peer, ?m, "ignoring handshake for another pair");
            }
        }
        match self.state {
            SessionState::Released { .. } => self.go_idle(),
            SessionState::Idle => {
                if input.event != ProximityEvent::Enter {
                    self.rearm_required = false;
                }
                if input.peer_mask_returned {
                    return out;
                }
                match (input.event, self.peer_offer(input.peer_msgs)) {
                    (ProximityEvent::Enter, Some(offer)) => {
                        let (id, acked) = match offer {
                            Handshake::Accept { session, .. } => (session, true),
                            other => {
                                let s = other.session();
                                (SessionId::new(self.local, self.peer, s.start.min(now)), false)
                            }
                        };
                        out.push(self.connect(id, input, acked));
                    }
                    (ProximityEvent::Enter, None) if !self.rearm_required => {
                        let id = SessionId::new(self.local, self.peer, now);
                        self.id = Some(id);
                        self.state = SessionState::Proposed { since: now };
                        self.sends = 1;
                        self.last_send = now;
                        self.last_enter = now;
                        self.acked = false;
                        self.proposal_locus = input.locus;
                        out.push(Handshake::Propose {
                            session: id,
                            locus: input.locus,
                            tick: now,
                        });
                    }
                    (_, Some(Handshake::Accept { session, .. })) => {
                        // Peer believes we are connected but we see no contact.
                        out.push(Handshake::Release { session, tick: now });
                    }
                    _ => {}
                }
            }
            SessionState::Proposed { .. } => {
                if input.peer_mask_returned {
                    self.go_idle();
                    return out;
                }
                if input.event == ProximityEvent::Enter {
                    self.last_enter = now;
                }
                let own = self.id.expect("proposed session has an id");
                if let Some(offer) = self.peer_offer(input.peer_msgs) {
                    let (id, acked) = match offer {
                        Handshake::Accept { session, .. } => (session, true),
                        other => (
                            SessionId::new(self.local, self.peer, own.start.min(other.session().start)),
                            false,
                        ),
                    };
                    out.push(self.connect(id, input, acked));
                } else {
                    let glitch_over = now.saturating_sub(self.last_enter) >= input.window_ticks;
                    let exhausted = self.sends >= MAX_HANDSHAKE_SENDS
                        && now.saturating_sub(self.last_send) >= input.window_ticks;
                    if glitch_over || exhausted {
                        self.go_idle();
                        self.rearm_required = exhausted && input.event == ProximityEvent::Enter;
                    }
                }
            }
            SessionState::Connected { .. } => {
                let id = self.id.expect("connected session has an id");
                let peer_released = input.peer_msgs.iter().any(
                    |m| matches!(m, Handshake::Release { session, .. } if *session == id),
                );
                if input.peer_mask_returned
                    || peer_released
                    || matches!(input.event, ProximityEvent::Exit | ProximityEvent::Stale)
                {
                    out.extend(self.release(now));
                    return out;
                }
                let mut reply = false;
                for m in input.peer_msgs {
                    if !m.session().involves(self.local, self.peer) {
                        continue;
                    }
                    match m {
                        Handshake::Propose { session, .. } => {
                            self.rekey(session.start);
                            reply = true;
                        }
                        Handshake::Accept { session, .. } => {
                            self.rekey(session.start);
                            self.acked = true;
                        }
                        Handshake::Release { .. } => {}
                    }
                }
                if reply {
                    out.push(Handshake::Accept {
                        session: self.id.expect("connected session has an id"),
                        tick: now,
                    });
                }
            }
        }
        out
    }

    /// Both replicas converge on the smallest proposed start tick.
    fn rekey(&mut self, start: Tick) {
        if let Some(id) = self.id.as_mut() {
            if start < id.start {
                id.start = start;
            }
        }
    }

    /// Retransmission due this tick, if any: proposals while proposed, and
    /// acceptances until the peer acknowledges.
    pub fn retransmit(&mut self, now: Tick, retry_ticks: Tick) -> Option<Handshake> {
        if self.sends >= MAX_HANDSHAKE_SENDS || now.saturating_sub(self.last_send) < retry_ticks {
            return None;
        }
        let session = self.id?;
        let msg = match self.state {
            SessionState::Proposed { .. } => Handshake::Propose {
                session,
                locus: self.proposal_locus,
                tick: now,
            },
            SessionState::Connected { .. } if !self.acked => Handshake::Accept { session, tick: now },
            _ => return None,
        };
        self.sends += 1;
        self.last_send = now;
        Some(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: AgentId = AgentId(1);
    const B: AgentId = AgentId(2);

    fn at(d: f64) -> Option<(DVec3, f64)> {
        Some((DVec3::new(d, 0.0, 0.0), 0.05))
    }

    #[test]
    fn detect_examples() {
        let cfg = ProximityConfig::default();
        assert_eq!(detect(DVec3::ZERO, at(0.09), &cfg, false), ProximityEvent::Enter);
        assert_eq!(detect(DVec3::ZERO, at(0.12), &cfg, true), ProximityEvent::Within);
        assert_eq!(
            detect(DVec3::ZERO, Some((DVec3::ZERO, 0.4)), &cfg, false),
            ProximityEvent::Stale
        );
        assert_eq!(detect(DVec3::ZERO, at(0.16), &cfg, true), ProximityEvent::Exit);
        assert_eq!(detect(DVec3::ZERO, None, &cfg, false), ProximityEvent::Stale);
    }

    #[test]
    fn stale_boundary_uses_tick_slack() {
        let cfg = ProximityConfig::default();
        // six ticks of 0.05 s is 0.30000000000000004 in floating point
        let age = 6.0 * 0.05;
        assert_eq!(
            detect(DVec3::ZERO, Some((DVec3::X, age)), &cfg, false),
            ProximityEvent::Within
        );
    }

    fn input(event: ProximityEvent, msgs: &[Handshake], now: Tick) -> SessionInput<'_> {
        SessionInput {
            event,
            peer_msgs: msgs,
            now,
            locus: DVec3::ZERO,
            peer_mask_returned: false,
            window_ticks: 4,
        }
    }

    #[test]
    fn simultaneous_enter_connects_with_identical_ids() {
        let mut a = TouchSession::new(A, B);
        let mut b = TouchSession::new(B, A);
        let to_b = a.step(&input(ProximityEvent::Enter, &[], 10));
        let to_a = b.step(&input(ProximityEvent::Enter, &[], 10));
        a.step(&input(ProximityEvent::Enter, &to_a, 11));
        b.step(&input(ProximityEvent::Enter, &to_b, 11));
        assert!(a.is_connected() && b.is_connected());
        assert_eq!(a.id, b.id);
        assert_eq!(a.id.unwrap().start, 10);
    }

    #[test]
    fn momentary_glitch_times_out_after_window() {
        let mut a = TouchSession::new(A, B);
        a.step(&input(ProximityEvent::Enter, &[], 0));
        for now in 1..4 {
            a.step(&input(ProximityEvent::Within, &[], now));
            assert!(matches!(a.state, SessionState::Proposed { .. }), "tick {now}");
        }
        a.step(&input(ProximityEvent::Within, &[], 4));
        assert!(a.state.is_idle());
    }

    #[test]
    fn stale_release_order_idle_next_tick() {
        let mut a = TouchSession::new(A, B);
        let accept = [Handshake::Accept {
            session: SessionId::new(A, B, 0),
            tick: 0,
        }];
        a.step(&input(ProximityEvent::Enter, &accept, 1));
        assert!(a.is_connected());
        let out = a.step(&input(ProximityEvent::Stale, &[], 2));
        assert!(matches!(a.state, SessionState::Released { at: 2 }));
        assert!(matches!(out[..], [Handshake::Release { .. }]));
        a.step(&input(ProximityEvent::Within, &[], 3));
        assert!(a.state.is_idle());
    }

    #[test]
    fn hysteresis_band_holds_connection() {
        let cfg = ProximityConfig::default();
        let mut a = TouchSession::new(A, B);
        let accept = [Handshake::Accept {
            session: SessionId::new(A, B, 0),
            tick: 0,
        }];
        a.step(&input(ProximityEvent::Enter, &accept, 1));
        for now in 2..200 {
            let d = if now % 2 == 0 { 0.11 } else { 0.14 };
            let ev = detect(DVec3::ZERO, at(d), &cfg, a.is_connected());
            a.step(&input(ev, &[], now));
            assert!(a.is_connected());
        }
    }

    #[test]
    fn idle_peer_without_contact_answers_accept_with_release() {
        let mut b = TouchSession::new(B, A);
        let id = SessionId::new(A, B, 5);
        let out = b.step(&input(ProximityEvent::Within, &[Handshake::Accept { session: id, tick: 6 }], 7));
        assert_eq!(out, vec![Handshake::Release { session: id, tick: 7 }]);
        assert!(b.state.is_idle());
    }

    #[test]
    fn replicas_converge_on_smallest_start() {
        let mut a = TouchSession::new(A, B);
        let early = SessionId::new(A, B, 3);
        let late = SessionId::new(A, B, 8);
        a.step(&input(
            ProximityEvent::Enter,
            &[Handshake::Accept { session: late, tick: 8 }],
            9,
        ));
        a.step(&input(
            ProximityEvent::Within,
            &[Handshake::Propose { session: early, locus: DVec3::ZERO, tick: 3 }],
            10,
        ));
        assert_eq!(a.id, Some(early));
    }

    #[test]
    fn config_validation() {
        ProximityConfig::default().validate().unwrap();
        let bad = ProximityConfig {
            exit_dist: 0.05,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
