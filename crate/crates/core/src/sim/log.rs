//! Append-only event log, its canonical serialization and digest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::model::{AgentId, ElementKind, ElementTrace, Tick};
use crate::netsync::NetMessage;
use crate::proximity::SessionId;
use crate::sim::command::ErrorCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Start {
        schema: String,
        dt: f64,
        sample_every: Tick,
        agents: Vec<AgentId>,
    },
    AgentSpawned {
        agent: AgentId,
    },
    MaskGrabbed {
        agent: AgentId,
        kind: ElementKind,
    },
    MaskReturned {
        agent: AgentId,
    },
    MaskRefused {
        agent: AgentId,
        reason: String,
    },
    Clap {
        agent: Option<AgentId>,
        energy: f64,
    },
    /// One replica's session with `peer` changed state.
    Session {
        agent: AgentId,
        peer: AgentId,
        from: String,
        to: String,
        session: Option<SessionId>,
    },
    Delivery {
        msg: NetMessage,
    },
    Sample {
        agent: AgentId,
        richness: usize,
        diversity: f64,
        traces: Vec<ElementTrace>,
    },
    CommandRejected {
        client: u64,
        code: ErrorCode,
        message: String,
    },
    End {
        ticks: Tick,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Start { .. } => "start",
            Event::AgentSpawned { .. } => "agent_spawned",
            Event::MaskGrabbed { .. } => "mask_grabbed",
            Event::MaskReturned { .. } => "mask_returned",
            Event::MaskRefused { .. } => "mask_refused",
            Event::Clap { .. } => "clap",
            Event::Session { .. } => "session",
            Event::Delivery { .. } => "delivery",
            Event::Sample { .. } => "sample",
            Event::CommandRejected { .. } => "command_rejected",
            Event::End { .. } => "end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: Tick,
    pub event: Event,
}

impl LogEntry {
    /// The canonical single-line JSON form.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("log entries serialize")
    }
}

/// 64-bit digest: the first eight bytes of SHA-256 over the canonical
/// newline-terminated lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Digest(pub u64);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Digest {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim(), 16).map(Digest)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    entries: Vec<LogEntry>,
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {source}")]
pub struct LogParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tick: Tick, event: Event) {
        self.entries.push(LogEntry { tick, event });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = (Tick, &Event)> {
        self.entries.iter().map(|e| (e.tick, &e.event))
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.canonical());
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, LogParseError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|source| LogParseError { line: i + 1, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn digest(&self) -> Digest {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.canonical().as_bytes());
            h.update(b"\n");
        }
        truncate(&h.finalize())
    }

    /// Chained prefix hashes: element `i` commits to entries `0..=i`.
    fn prefix_chain(&self) -> Vec<[u8; 32]> {
        let mut prev = [0u8; 32];
        self.entries
            .iter()
            .map(|e| {
                let mut h = Sha256::new();
                h.update(prev);
                h.update(e.canonical().as_bytes());
                prev = h.finalize().into();
                prev
            })
            .collect()
    }
}

fn truncate(bytes: &[u8]) -> Digest {
    let mut head = [0u8; 8];
    head.copy_from_slice(&bytes[..8]);
    Digest(u64::from_be_bytes(head))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Equal,
    FirstDivergence {
        tick: Tick,
        index: usize,
        description: String,
    },
}

/// Compares two logs by digest and, on mismatch, binary-searches the
/// chained prefix hashes for the first differing entry.
pub fn verify(a: &EventLog, b: &EventLog) -> Verdict {
    if a.digest() == b.digest() && a.len() == b.len() {
        return Verdict::Equal;
    }
    let (ca, cb) = (a.prefix_chain(), b.prefix_chain());
    let common = ca.len().min(cb.len());
    // first index in 0..common whose prefixes differ, or `common`
    let (mut lo, mut hi) = (0usize, common);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if ca[mid] == cb[mid] {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let index = lo;
    let show = |log: &EventLog| {
        log.entries.get(index).map_or_else(
            || "<end of log>".to_string(),
            |e| clip(&e.canonical(), 160),
        )
    };
    let tick = a
        .entries
        .get(index)
        .or_else(|| b.entries.get(index))
        .map_or(0, |e| e.tick);
    if index >= common && a.len() == b.len() {
        // equal entries but colliding truncated digests cannot differ here
        return Verdict::Equal;
    }
    Verdict::FirstDivergence {
        tick,
        index,
        description: format!("entry {index}: left {} | right {}", show(a), show(b)),
    }
}

fn clip(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}
