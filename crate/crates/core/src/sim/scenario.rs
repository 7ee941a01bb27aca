//! Declarative scenario input, versioned as `fungisync-scenario/1`.

use std::collections::BTreeSet;
use std::path::Path;

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsParams, ParamsError};
use crate::model::{AgentId, Tick};
use crate::netsync::{LinkConfig, LinkConfigError};
use crate::proximity::{ProximityConfig, ProximityConfigError};
use crate::sim::command::ClientCommand;

pub const SCENARIO_SCHEMA: &str = "fungisync-scenario/1";

fn default_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

fn default_dt() -> f64 {
    0.05
}

fn default_facing() -> DVec3 {
    DVec3::X
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema: String,
    /// seconds
    pub duration: f64,
    /// seconds
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub agents: Vec<AgentScript>,
    #[serde(default)]
    pub link: LinkConfig,
    /// `params.dt` is ignored; the scenario-level `dt` governs.
    #[serde(default)]
    pub params: DynamicsParams,
    #[serde(default)]
    pub proximity: ProximityConfig,
    /// Commands injected at exact ticks, as recorded by the live service.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commands: Vec<RecordedCommand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    pub id: AgentId,
    #[serde(default)]
    pub position: DVec3,
    #[serde(default = "default_facing")]
    pub facing: DVec3,
    /// Hand position relative to the body, world frame.
    #[serde(default)]
    pub hand_offset: DVec3,
    #[serde(default)]
    pub script: Vec<TimedAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    /// seconds
    pub at: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Linear interpolation to `position` over `over` seconds.
    MoveTo {
        position: DVec3,
        #[serde(default)]
        facing: Option<DVec3>,
        #[serde(default)]
        over: f64,
    },
    HandTo {
        offset: DVec3,
    },
    GrabMask,
    ReturnMask,
    Clap {
        energy: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCommand {
    pub tick: Tick,
    pub client: u64,
    pub command: ClientCommand,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unsupported schema {0:?}, expected {SCENARIO_SCHEMA:?}")]
    Schema(String),
    #[error("duration must be positive and finite, got {0}")]
    Duration(f64),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Proximity(#[from] ProximityConfigError),
    #[error(transparent)]
    Link(#[from] LinkConfigError),
    #[error("duplicate agent id {0}")]
    DuplicateAgent(AgentId),
    #[error("{agent}: action at {at} s lies outside [0, {duration}]")]
    ActionTime { agent: AgentId, at: f64, duration: f64 },
    #[error("{agent}: move_to duration must be >= 0, got {over}")]
    MoveDuration { agent: AgentId, over: f64 },
    #[error("{agent}: clap energy must lie in [0, 1], got {energy}")]
    ClapEnergy { agent: AgentId, energy: f64 },
    #[error("{agent}: facing vector must be non-zero")]
    Facing { agent: AgentId },
    #[error("recorded command at tick {tick} lies beyond the last tick {last}")]
    CommandTick { tick: Tick, last: Tick },
    #[error("invalid scenario document: {0}")]
    Parse(String),
}

impl Scenario {
    /// An empty scenario with default configuration.
    pub fn new(duration: f64, seed: u64) -> Self {
        Self {
            schema: default_schema(),
            duration,
            dt: default_dt(),
            seed,
            agents: Vec::new(),
            link: LinkConfig::default(),
            params: DynamicsParams::default(),
            proximity: ProximityConfig::default(),
            commands: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Result<Self, ScenarioError>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Dynamics parameters with the scenario's tick length.
    pub fn effective_params(&self) -> DynamicsParams {
        self.params.with_dt(self.dt)
    }

    /// Index of the last tick; the engine runs ticks `0..=last_tick`.
    pub fn last_tick(&self) -> Tick {
        (self.duration / self.dt).round() as Tick
    }

    pub fn tick_of(&self, seconds: f64) -> Tick {
        (seconds / self.dt).round().max(0.0) as Tick
    }

    /// Checks every constraint and returns the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema(self.schema.clone()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(ScenarioError::Duration(self.duration));
        }
        self.effective_params().validate()?;
        self.proximity.validate()?;
        self.link.validate()?;
        let mut seen = BTreeSet::new();
        for agent in &self.agents {
            if !seen.insert(agent.id) {
                return Err(ScenarioError::DuplicateAgent(agent.id));
            }
            if agent.facing.length_squared() == 0.0 {
                return Err(ScenarioError::Facing { agent: agent.id });
            }
            for step in &agent.script {
                if !(0.0..=self.duration).contains(&step.at) {
                    return Err(ScenarioError::ActionTime {
                        agent: agent.id,
                        at: step.at,
                        duration: self.duration,
                    });
                }
                match step.action {
                    Action::MoveTo { over, facing, .. } => {
                        if !(over >= 0.0 && over.is_finite()) {
                            return Err(ScenarioError::MoveDuration { agent: agent.id, over });
                        }
                        if facing.is_some_and(|f| f.length_squared() == 0.0) {
                            return Err(ScenarioError::Facing { agent: agent.id });
                        }
                    }
                    Action::Clap { energy } if !(0.0..=1.0).contains(&energy) => {
                        return Err(ScenarioError::ClapEnergy {
                            agent: agent.id,
                            energy,
                        });
                    }
                    _ => {}
                }
            }
        }
        let last = self.last_tick();
        if let Some(c) = self.commands.iter().find(|c| c.tick > last) {
            return Err(ScenarioError::CommandTick { tick: c.tick, last });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let s = Scenario::from_json(r#"{"duration": 2.0}"#).unwrap();
        s.validate().unwrap();
        assert_eq!(s.dt, 0.05);
        assert_eq!(s.last_tick(), 40);
        assert_eq!(s.link, LinkConfig::default());
    }

    #[test]
    fn actions_parse() {
        let s = Scenario::from_json(
            r#"{"duration": 5, "agents": [{"id": 1, "script": [
                {"at": 0, "action": "grab_mask"},
                {"at": 1, "action": "move_to", "position": [1, 0, 0], "over": 2},
                {"at": 2, "action": "hand_to", "offset": [0.3, 0, 1.2]},
                {"at": 3, "action": "clap", "energy": 0.5},
                {"at": 5, "action": "return_mask"}
            ]}]}"#,
        )
        .unwrap();
        s.validate().unwrap();
        assert_eq!(s.agents[0].script.len(), 5);
    }

    #[test]
    fn first_violation_is_reported() {
        let mut s = Scenario::from_json(
            r#"{"duration": 1, "agents": [{"id": 1}, {"id": 1}]}"#,
        )
        .unwrap();
        assert_eq!(s.validate(), Err(ScenarioError::DuplicateAgent(AgentId(1))));
        s.agents.pop();
        s.agents[0].script.push(TimedAction {
            at: 1.5,
            action: Action::GrabMask,
        });
        assert!(matches!(s.validate(), Err(ScenarioError::ActionTime { .. })));
        s.schema = "other/2".into();
        assert!(matches!(s.validate(), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(Scenario::from_json(r#"{"duration": 1, "bogus": 3}"#).is_err());
    }
}
