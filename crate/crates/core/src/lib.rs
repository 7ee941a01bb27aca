//! Touch-triggered umwelt entanglement between co-located agents.
//!
//! Each masked agent perceives one native element. When two agents bring
//! their hands within reach, a two-sided handshake opens a session during
//! which each side's view of the other's elements bleeds into its own,
//! weighted by how squarely it faces its partner. After release the borrowed
//! elements fade out linearly. Enriched agents pass borrowed elements on to
//! others, so traces propagate transitively through the group.
//!
//! State is replicated between agents over a simulated lossy network, and the
//! whole system advances in a deterministic fixed-tick engine whose event
//! log digest is a pure function of the scenario and seed.
//!
//! - [`model`]: agents, traces, umwelten, the mask pool
//! - [`dynamics`]: transfer, decay and audio laws
//! - [`proximity`]: hand-distance detection and the session state machine
//! - [`netsync`]: messages, the simulated network, peer views
//! - [`sim`]: scenarios, the engine, event logs, metrics
//! - [`service`]: the live WebSocket service

pub mod dynamics;
pub mod model;
pub mod netsync;
pub mod proximity;
pub mod service;
pub mod sim;

pub use model::{AgentId, AgentState, ElementKind, ElementTrace, MaskPool, Tick, Umwelt};
pub use sim::{run, Engine, EventLog, MetricsReport, Scenario};
