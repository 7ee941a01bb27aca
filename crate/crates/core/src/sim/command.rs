//! Commands injected into a running engine at tick boundaries.

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, PoolError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    SpawnAgent { id: AgentId },
    MoveAgent { id: AgentId, position: DVec3, facing: DVec3 },
    MoveHand { id: AgentId, position: DVec3 },
    GrabMask { id: AgentId },
    ReturnMask { id: AgentId },
    Clap { energy: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    UnknownAgent,
    AgentExists,
    PoolExhausted,
    AlreadyHeld,
    NotHeld,
    BadPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code:?}: {message}")]
pub struct CommandError {
    pub code: ErrorCode,
    pub message: String,
}

impl CommandError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn unknown_agent(id: AgentId) -> Self {
        Self::new(ErrorCode::UnknownAgent, format!("no such agent: {id}"))
    }
}

impl From<PoolError> for CommandError {
    fn from(e: PoolError) -> Self {
        let code = match e {
            PoolError::PoolExhausted => ErrorCode::PoolExhausted,
            PoolError::AlreadyHeld(_) => ErrorCode::AlreadyHeld,
            PoolError::NotHeld(_) => ErrorCode::NotHeld,
        };
        Self::new(code, e.to_string())
    }
}
