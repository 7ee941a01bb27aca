//! The deterministic fixed-tick engine.
//!
//! Every tick runs these phases in order:
//!
//! 1. scripted actions, recorded commands, then live commands; motion
//!    interpolation
//! 2. delivery of due network messages into peer views and session inboxes
//! 3. proximity detection and session stepping, agents and peers in
//!    ascending id order
//! 4. dynamics: transfer from connected peers, then decay
//! 5. audio envelope
//! 6. scheduled broadcasts
//! 7. sampling
//!
//! Output depends only on the scenario (including its seed).

use std::collections::{BTreeMap, BTreeSet};

use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracing::{debug, trace};

use crate::dynamics::{
    geometry_factor_at, step_audio, step_decay, step_transfer, AudioEnvelope, DynamicsParams,
    Protected,
};
use crate::model::{normalize_facing, AgentId, AgentState, MaskPool, Tick};
use crate::netsync::{
    broadcast_schedule, Applied, BroadcastConfig, MessageBody, NetMessage, NetStats, PeerView,
    Recipient, SeqCounter, SimNetwork,
};
use crate::proximity::{
    detect, Handshake, ProximityConfig, SessionId, SessionInput, SessionState, TouchSession,
};
use crate::sim::command::{ClientCommand, CommandError, ErrorCode};
use crate::sim::log::{Event, EventLog};
use crate::sim::scenario::{Action, RecordedCommand, Scenario, ScenarioError, SCENARIO_SCHEMA};

const POOL_STREAM: u64 = 1;
const NET_STREAM: u64 = 2;

/// Radius of the ring on which live-spawned agents appear, meters.
pub const SPAWN_RING_RADIUS: f64 = 1.5;

#[derive(Debug, Clone)]
struct Motion {
    from: DVec3,
    to: DVec3,
    from_facing: DVec3,
    to_facing: DVec3,
    start: Tick,
    end: Tick,
}

impl Motion {
    fn at(&self, now: Tick) -> (DVec3, DVec3) {
        let span = (self.end - self.start) as f64;
        let frac = (now.saturating_sub(self.start) as f64 / span).min(1.0);
        let pos = self.from.lerp(self.to, frac);
        let facing = normalize_facing(self.from_facing.lerp(self.to_facing, frac));
        (pos, facing)
    }
}

#[derive(Debug, Clone)]
struct Slot {
    state: AgentState,
    hand_offset: DVec3,
    motion: Option<Motion>,
    view: PeerView,
    sessions: BTreeMap<AgentId, TouchSession>,
    inbox: BTreeMap<AgentId, Vec<Handshake>>,
    protected: Protected,
}

impl Slot {
    fn sync_hand(&mut self) {
        self.state.hand_position = self.state.position + self.hand_offset;
    }
}

type SessionKey = (&'static str, Option<SessionId>);

fn key_of(s: &TouchSession) -> SessionKey {
    (s.state.label(), s.id)
}

fn log_transition(log: &mut EventLog, now: Tick, s: &TouchSession, before: SessionKey) {
    let after = key_of(s);
    if before.0 != after.0 {
        log.push(
            now,
            Event::Session {
                agent: s.local,
                peer: s.peer,
                from: before.0.to_string(),
                to: after.0.to_string(),
                session: after.1.or(before.1),
            },
        );
    }
}

/// Result of one command, keyed by the client that sent it.
pub type CommandOutcome = (u64, Result<(), CommandError>);

#[derive(Debug, Clone)]
pub struct Engine {
    dt: f64,
    params: DynamicsParams,
    proximity: ProximityConfig,
    broadcast: BroadcastConfig,
    window_ticks: Tick,
    sample_every: Tick,
    tick: Tick,
    agents: BTreeMap<AgentId, Slot>,
    pool: MaskPool,
    pool_rng: ChaCha8Rng,
    net: SimNetwork,
    seqs: SeqCounter,
    audio: AudioEnvelope,
    impulse: f64,
    script: BTreeMap<Tick, Vec<(AgentId, Action)>>,
    injected: BTreeMap<Tick, Vec<RecordedCommand>>,
    recorded: Vec<RecordedCommand>,
    log: EventLog,
}

impl Engine {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let dt = scenario.dt;
        let params = scenario.effective_params();
        let mut pool_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        pool_rng.set_stream(POOL_STREAM);
        let mut net_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        net_rng.set_stream(NET_STREAM);

        let mut script: BTreeMap<Tick, Vec<(AgentId, Action)>> = BTreeMap::new();
        let mut ordered: Vec<_> = scenario.agents.iter().collect();
        ordered.sort_by_key(|a| a.id);
        for agent in &ordered {
            for step in &agent.script {
                script
                    .entry(scenario.tick_of(step.at))
                    .or_default()
                    .push((agent.id, step.action.clone()));
            }
        }
        let mut injected: BTreeMap<Tick, Vec<RecordedCommand>> = BTreeMap::new();
        for c in &scenario.commands {
            injected.entry(c.tick).or_default().push(c.clone());
        }

        let mut engine = Self {
            dt,
            params,
            proximity: scenario.proximity,
            broadcast: BroadcastConfig::for_dt(dt),
            window_ticks: scenario.proximity.window_ticks(dt),
            sample_every: ((1.0 / dt).round() as Tick).max(1),
            tick: 0,
            agents: BTreeMap::new(),
            pool: MaskPool::new(),
            pool_rng,
            net: SimNetwork::with_rng(scenario.link, dt, net_rng),
            seqs: SeqCounter::default(),
            audio: AudioEnvelope::default(),
            impulse: 0.0,
            script,
            injected,
            recorded: Vec::new(),
            log: EventLog::new(),
        };
        for a in &ordered {
            let state = AgentState::new(a.id, a.position, a.facing);
            engine.insert_agent(state, a.hand_offset);
        }
        engine.log.push(
            0,
            Event::Start {
                schema: SCENARIO_SCHEMA.to_string(),
                dt,
                sample_every: engine.sample_every,
                agents: ordered.iter().map(|a| a.id).collect(),
            },
        );
        Ok(engine)
    }

    fn insert_agent(&mut self, state: AgentState, hand_offset: DVec3) {
        let id = state.id;
        let mut slot = Slot {
            state,
            hand_offset,
            motion: None,
            view: PeerView::new(id, self.params.r_decay * self.dt),
            sessions: BTreeMap::new(),
            inbox: BTreeMap::new(),
            protected: Protected::new(),
        };
        slot.sync_hand();
        self.agents.insert(id, slot);
    }

    /// Index of the next tick to execute.
    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &DynamicsParams {
        &self.params
    }

    pub fn audio(&self) -> &AudioEnvelope {
        &self.audio
    }

    pub fn pool(&self) -> &MaskPool {
        &self.pool
    }

    pub fn net_stats(&self) -> NetStats {
        self.net.stats()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.agents.get(&id).map(|s| &s.state)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.values().map(|s| &s.state)
    }

    /// `id`'s replicas of its sessions, by peer.
    pub fn sessions(&self, id: AgentId) -> impl Iterator<Item = &TouchSession> {
        self.agents.get(&id).into_iter().flat_map(|s| s.sessions.values())
    }

    pub fn session(&self, id: AgentId, peer: AgentId) -> Option<&TouchSession> {
        self.agents.get(&id)?.sessions.get(&peer)
    }

    pub fn view(&self, id: AgentId) -> Option<&PeerView> {
        self.agents.get(&id).map(|s| &s.view)
    }

    /// Every command applied so far, stamped with its tick.
    pub fn recorded_commands(&self) -> &[RecordedCommand] {
        &self.recorded
    }

    fn masked_ids(&self) -> Vec<AgentId> {
        self.agents
            .values()
            .filter(|s| s.state.is_masked())
            .map(|s| s.state.id)
            .collect()
    }

    /// Executes one tick. `live` commands are applied in order during
    /// phase 1, after scripted actions and recorded commands.
    pub fn step(&mut self, live: &[(u64, ClientCommand)]) -> Vec<CommandOutcome> {
        let now = self.tick;

        // 1. actions and commands
        if let Some(actions) = self.script.remove(&now) {
            for (id, action) in actions {
                self.apply_action(id, action, now);
            }
        }
        if let Some(cmds) = self.injected.remove(&now) {
            for c in cmds {
                let _ = self.apply_command(c.client, c.command, now);
            }
        }
        let outcomes = live
            .iter()
            .map(|(client, cmd)| (*client, self.apply_command(*client, cmd.clone(), now)))
            .collect();
        for slot in self.agents.values_mut() {
            if let Some(m) = &slot.motion {
                let (pos, facing) = m.at(now);
                slot.state.position = pos;
                slot.state.facing = facing;
                if now >= m.end {
                    slot.motion = None;
                }
            }
            slot.sync_hand();
        }

        let masked = self.masked_ids();

        // 2. deliveries
        for msg in self.net.deliver_due(now) {
            self.log.push(now, Event::Delivery { msg: msg.clone() });
            let Some(slot) = self.agents.get_mut(&msg.to) else { continue };
            if !slot.state.is_masked() {
                continue;
            }
            match slot.view.apply(&msg, now) {
                Applied::Handshake(h) => slot.inbox.entry(msg.from).or_default().push(h),
                Applied::Stale => trace!(from = %msg.from, to = %msg.to, seq = msg.seq, "stale message dropped"),
                _ => {}
            }
        }

        // 3. proximity and sessions
        let mut handshakes: Vec<(AgentId, AgentId, Handshake)> = Vec::new();
        for &a in &masked {
            let slot = self.agents.get_mut(&a).expect("masked agent has a slot");
            let local_hand = slot.state.hand_position;
            for &b in &masked {
                if b == a {
                    continue;
                }
                let pose = slot.view.pose(b).cloned();
                let remote = pose
                    .as_ref()
                    .map(|p| (p.value.hand_position, now.saturating_sub(p.tick) as f64 * self.dt));
                let session = slot
                    .sessions
                    .entry(b)
                    .or_insert_with(|| TouchSession::new(a, b));
                let event = detect(local_hand, remote, &self.proximity, session.is_connected());
                let locus = pose
                    .as_ref()
                    .map_or(local_hand, |p| (local_hand + p.value.hand_position) * 0.5);
                let msgs = slot.inbox.remove(&b).unwrap_or_default();
                let before = key_of(session);
                let out = session.step(&SessionInput {
                    event,
                    peer_msgs: &msgs,
                    now,
                    locus,
                    peer_mask_returned: false,
                    window_ticks: self.window_ticks,
                });
                if let (true, Some(p)) = (session.is_connected(), pose.as_ref()) {
                    let g_local = geometry_factor_at(
                        slot.state.position,
                        slot.state.facing,
                        p.value.position,
                        self.params.g_min,
                    );
                    let g_peer = geometry_factor_at(
                        p.value.position,
                        p.value.facing,
                        slot.state.position,
                        self.params.g_min,
                    );
                    session.set_geometry(g_local, g_peer);
                }
                log_transition(&mut self.log, now, session, before);
                handshakes.extend(out.into_iter().map(|h| (a, b, h)));
            }
            // sessions whose peer has left the network wind down to idle
            let gone: Vec<AgentId> = slot
                .sessions
                .keys()
                .copied()
                .filter(|p| !masked.contains(p))
                .collect();
            for p in gone {
                let mut s = slot.sessions.remove(&p).expect("listed");
                if !s.state.is_idle() {
                    let before = key_of(&s);
                    s.state = SessionState::Idle;
                    log_transition(&mut self.log, now, &s, before);
                }
            }
            slot.inbox.clear();
        }
        for (from, to, h) in handshakes {
            self.send_to(from, to, h.into(), now);
        }

        // 4. dynamics
        for &a in &masked {
            let slot = self.agents.get_mut(&a).expect("masked agent has a slot");
            let Slot {
                state,
                view,
                sessions,
                protected,
                ..
            } = slot;
            let umwelt = state.umwelt.as_mut().expect("masked agent has an umwelt");
            protected.clear();
            for (peer, s) in sessions.iter() {
                if !s.is_connected() {
                    continue;
                }
                if let Some(donor) = view.umwelt_estimate(*peer, now) {
                    protected.extend(step_transfer(umwelt, &donor, s.local_g(), &self.params));
                }
            }
            step_decay(umwelt, protected, &self.params);
        }

        // 5. audio
        self.audio = step_audio(self.audio, self.impulse, self.dt);
        self.impulse = 0.0;

        // 6. broadcasts
        let mut outgoing = Vec::new();
        for &a in &masked {
            let slot = self.agents.get_mut(&a).expect("masked agent has a slot");
            let out = broadcast_schedule(
                &slot.state,
                &slot.protected,
                slot.sessions.values_mut(),
                now,
                &self.broadcast,
            );
            outgoing.push((a, out));
        }
        for (from, out) in outgoing {
            for o in out {
                match o.to {
                    Recipient::AllPeers => {
                        let seq = self.seqs.next(from);
                        for &to in &masked {
                            if to != from {
                                self.net.send(
                                    NetMessage {
                                        sent: now,
                                        from,
                                        to,
                                        seq,
                                        body: o.body.clone(),
                                    },
                                    now,
                                );
                            }
                        }
                    }
                    Recipient::Peer(to) => self.send_to(from, to, o.body, now),
                }
            }
        }

        // 7. sampling
        if now.is_multiple_of(self.sample_every) {
            for &a in &masked {
                let u = self.agents[&a].state.umwelt.as_ref().expect("masked");
                self.log.push(
                    now,
                    Event::Sample {
                        agent: a,
                        richness: u.richness(self.params.eps_vis),
                        diversity: u.diversity(),
                        traces: u.traces().copied().collect(),
                    },
                );
            }
        }

        if cfg!(debug_assertions) {
            self.assert_invariants();
        }
        self.tick += 1;
        outcomes
    }

    fn send_to(&mut self, from: AgentId, to: AgentId, body: MessageBody, now: Tick) {
        if !self.agents.get(&to).is_some_and(|s| s.state.is_masked()) {
            return;
        }
        let seq = self.seqs.next(from);
        self.net.send(
            NetMessage {
                sent: now,
                from,
                to,
                seq,
                body,
            },
            now,
        );
    }

    /// Panics if any reachable-state invariant is broken.
    pub fn assert_invariants(&self) {
        assert!(self.pool.held().len() <= self.pool.capacity());
        let masked: BTreeSet<AgentId> = self.masked_ids().into_iter().collect();
        assert_eq!(&masked, self.pool.held(), "mask pool disagrees with agents");
        for slot in self.agents.values() {
            if let Err(e) = slot.state.check_invariants() {
                panic!("tick {}: {e}", self.tick);
            }
        }
    }

    fn apply_action(&mut self, id: AgentId, action: Action, now: Tick) {
        match action {
            Action::MoveTo {
                position,
                facing,
                over,
            } => {
                let Some(slot) = self.agents.get_mut(&id) else { return };
                let to_facing = facing.map_or(slot.state.facing, normalize_facing);
                let span = (over / self.dt).round() as Tick;
                if span == 0 {
                    slot.state.position = position;
                    slot.state.facing = to_facing;
                    slot.motion = None;
                } else {
                    slot.motion = Some(Motion {
                        from: slot.state.position,
                        to: position,
                        from_facing: slot.state.facing,
                        to_facing,
                        start: now,
                        end: now + span,
                    });
                }
            }
            Action::HandTo { offset } => {
                if let Some(slot) = self.agents.get_mut(&id) {
                    slot.hand_offset = offset;
                }
            }
            Action::GrabMask => {
                let _ = self.grab(id, now);
            }
            Action::ReturnMask => {
                let _ = self.return_mask(id, now);
            }
            Action::Clap { energy } => self.clap(Some(id), energy, now),
        }
    }

    fn clap(&mut self, agent: Option<AgentId>, energy: f64, now: Tick) {
        self.impulse = self.impulse.max(energy.clamp(0.0, 1.0));
        self.log.push(now, Event::Clap { agent, energy });
    }

    fn grab(&mut self, id: AgentId, now: Tick) -> Result<(), CommandError> {
        if !self.agents.contains_key(&id) {
            return Err(CommandError::unknown_agent(id));
        }
        match self.pool.grab_mask(id, &mut self.pool_rng) {
            Ok(kind) => {
                let decay = self.params.r_decay * self.dt;
                let slot = self.agents.get_mut(&id).expect("checked");
                slot.state.put_on_mask(kind, now);
                slot.view = PeerView::new(id, decay);
                slot.sessions.clear();
                slot.inbox.clear();
                slot.protected.clear();
                self.log.push(now, Event::MaskGrabbed { agent: id, kind });
                debug!(agent = %id, %kind, "mask grabbed");
                Ok(())
            }
            Err(e) => {
                self.log.push(
                    now,
                    Event::MaskRefused {
                        agent: id,
                        reason: e.to_string(),
                    },
                );
                Err(e.into())
            }
        }
    }

    fn return_mask(&mut self, id: AgentId, now: Tick) -> Result<(), CommandError> {
        if !self.agents.contains_key(&id) {
            return Err(CommandError::unknown_agent(id));
        }
        if let Err(e) = self.pool.return_mask(id) {
            self.log.push(
                now,
                Event::MaskRefused {
                    agent: id,
                    reason: e.to_string(),
                },
            );
            return Err(e.into());
        }
        // Force-release every live session involving the returning agent,
        // on both replicas, this tick.
        let peers: Vec<AgentId> = self.agents.keys().copied().filter(|p| *p != id).collect();
        for p in peers {
            let slot = self.agents.get_mut(&p).expect("listed");
            if let Some(s) = slot.sessions.get_mut(&id) {
                let before = key_of(s);
                s.force_release(now);
                log_transition(&mut self.log, now, s, before);
            }
        }
        let slot = self.agents.get_mut(&id).expect("checked");
        for s in slot.sessions.values_mut() {
            let before = key_of(s);
            s.force_release(now);
            log_transition(&mut self.log, now, s, before);
        }
        slot.sessions.clear();
        slot.inbox.clear();
        slot.protected.clear();
        slot.state.take_off_mask();
        self.log.push(now, Event::MaskReturned { agent: id });
        debug!(agent = %id, "mask returned");
        Ok(())
    }

    fn apply_command(&mut self, client: u64, cmd: ClientCommand, now: Tick) -> Result<(), CommandError> {
        self.recorded.push(RecordedCommand {
            tick: now,
            client,
            command: cmd.clone(),
        });
        let result = self.execute(cmd, now);
        if let Err(e) = &result {
            self.log.push(
                now,
                Event::CommandRejected {
                    client,
                    code: e.code,
                    message: e.message.clone(),
                },
            );
        }
        result
    }

    fn execute(&mut self, cmd: ClientCommand, now: Tick) -> Result<(), CommandError> {
        let bad = |msg: &str| CommandError::new(ErrorCode::BadPayload, msg);
        match cmd {
            ClientCommand::SpawnAgent { id } => {
                if self.agents.contains_key(&id) {
                    return Err(CommandError::new(
                        ErrorCode::AgentExists,
                        format!("{id} already exists"),
                    ));
                }
                let angle = (id.0 % 12) as f64 * std::f64::consts::TAU / 12.0;
                let position = DVec3::new(angle.cos(), angle.sin(), 0.0) * SPAWN_RING_RADIUS;
                self.insert_agent(AgentState::new(id, position, -position), DVec3::ZERO);
                self.log.push(now, Event::AgentSpawned { agent: id });
                Ok(())
            }
            ClientCommand::MoveAgent {
                id,
                position,
                facing,
            } => {
                if !position.is_finite() || !facing.is_finite() || facing.length_squared() == 0.0 {
                    return Err(bad("position and facing must be finite, facing non-zero"));
                }
                let slot = self
                    .agents
                    .get_mut(&id)
                    .ok_or_else(|| CommandError::unknown_agent(id))?;
                slot.state.position = position;
                slot.state.facing = normalize_facing(facing);
                slot.motion = None;
                slot.sync_hand();
                Ok(())
            }
            ClientCommand::MoveHand { id, position } => {
                if !position.is_finite() {
                    return Err(bad("hand position must be finite"));
                }
                let slot = self
                    .agents
                    .get_mut(&id)
                    .ok_or_else(|| CommandError::unknown_agent(id))?;
                slot.hand_offset = position - slot.state.position;
                slot.sync_hand();
                Ok(())
            }
            ClientCommand::GrabMask { id } => self.grab(id, now),
            ClientCommand::ReturnMask { id } => self.return_mask(id, now),
            ClientCommand::Clap { energy } => {
                if !(0.0..=1.0).contains(&energy) {
                    return Err(bad("clap energy must lie in [0, 1]"));
                }
                self.clap(None, energy, now);
                Ok(())
            }
        }
    }

    /// Closes the log.
    pub fn finish(mut self) -> EventLog {
        let last = self.tick.saturating_sub(1);
        self.log.push(last, Event::End { ticks: self.tick });
        self.log
    }

    /// A scenario that reproduces this run in the batch engine: `base` with
    /// every applied command injected at its tick and the duration trimmed
    /// to the ticks executed so far.
    pub fn replay_scenario(&self, base: &Scenario) -> Scenario {
        let mut s = base.clone();
        let last = self.tick.saturating_sub(1);
        s.duration = last as f64 * self.dt;
        s.commands = self.recorded.clone();
        for agent in &mut s.agents {
            agent.script.retain(|a| (a.at / self.dt).round() as Tick <= last);
            for a in &mut agent.script {
                a.at = a.at.min(s.duration);
            }
        }
        s
    }
}
