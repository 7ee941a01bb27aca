//! Metrics derived from a completed event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AgentId, Tick};
use crate::sim::log::{Event, EventLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    /// seconds
    pub t: f64,
    pub richness: usize,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: AgentId,
    pub samples: Vec<SamplePoint>,
    /// Fraction of masked samples with nothing visible beyond the native
    /// trace. `None` if the agent never wore a mask.
    pub isolation_index: Option<f64>,
}

/// An entanglement-graph edge: a pair that connected at least once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: AgentId,
    pub b: AgentId,
    pub sessions: u32,
    /// Connected time, averaged over the two replicas.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dt: f64,
    pub agents: Vec<AgentMetrics>,
    pub graph: Vec<Edge>,
}

impl MetricsReport {
    pub fn agent(&self, id: AgentId) -> Option<&AgentMetrics> {
        self.agents.iter().find(|a| a.agent == id)
    }

    pub fn edge(&self, a: AgentId, b: AgentId) -> Option<&Edge> {
        let (a, b) = (a.min(b), a.max(b));
        self.graph.iter().find(|e| e.a == a && e.b == b)
    }
}

#[derive(Default)]
struct Directed {
    open: Option<Tick>,
    ticks: Tick,
    connects: u32,
}

pub fn metrics(log: &EventLog) -> MetricsReport {
    let mut dt = 0.0;
    let mut end: Tick = 0;
    let mut series: BTreeMap<AgentId, Vec<SamplePoint>> = BTreeMap::new();
    let mut directed: BTreeMap<(AgentId, AgentId), Directed> = BTreeMap::new();

    for (tick, event) in log.events() {
        match event {
            Event::Start { dt: d, agents, .. } => {
                dt = *d;
                for a in agents {
                    series.entry(*a).or_default();
                }
            }
            Event::AgentSpawned { agent } => {
                series.entry(*agent).or_default();
            }
            Event::Sample {
                agent,
                richness,
                diversity,
                ..
            } => series.entry(*agent).or_default().push(SamplePoint {
                t: tick as f64 * dt,
                richness: *richness,
                diversity: *diversity,
            }),
            Event::Session {
                agent,
                peer,
                from,
                to,
                session,
            } => {
                let d = directed.entry((*agent, *peer)).or_default();
                if to == "connected" && d.open.is_none() {
                    // a session is counted from its agreed start tick
                    d.open = Some(session.map_or(tick, |s| s.start.min(tick)));
                    d.connects += 1;
                } else if from == "connected" && to != "connected" {
                    if let Some(since) = d.open.take() {
                        d.ticks += tick - since;
                    }
                }
            }
            Event::End { ticks } => end = *ticks,
            _ => {}
        }
    }
    for d in directed.values_mut() {
        if let Some(since) = d.open.take() {
            d.ticks += end.saturating_sub(since);
        }
    }

    let mut pairs: BTreeMap<(AgentId, AgentId), Vec<&Directed>> = BTreeMap::new();
    for ((a, b), d) in &directed {
        if d.connects > 0 {
            pairs.entry(((*a).min(*b), (*a).max(*b))).or_default().push(d);
        }
    }
    let graph = pairs
        .into_iter()
        .map(|((a, b), sides)| Edge {
            a,
            b,
            sessions: sides.iter().map(|d| d.connects).max().unwrap_or(0),
            seconds: sides.iter().map(|d| d.ticks as f64 * dt).sum::<f64>() / sides.len() as f64,
        })
        .collect();

    let agents = series
        .into_iter()
        .map(|(agent, samples)| {
            let isolation_index = (!samples.is_empty()).then(|| {
                samples.iter().filter(|s| s.richness <= 1).count() as f64 / samples.len() as f64
            });
            AgentMetrics {
                agent,
                samples,
                isolation_index,
            }
        })
        .collect();

    MetricsReport { dt, agents, graph }
}
