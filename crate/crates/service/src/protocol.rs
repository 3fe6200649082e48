//! Wire types. Every payload carries `version`; bodies are JSON, event streams NDJSON.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use davinci_core::deduction::CandidateSet;
use davinci_core::engine::{Action, HistoryEvent, PlayerId, PlayerView, Tile};
use davinci_core::llm_gateway::LlmConfig;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    Random,
    Heuristic,
    Ppo { checkpoint: PathBuf },
    Llm(LlmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub agent: AgentSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub human_seat: Option<PlayerId>,
    #[serde(default)]
    pub hand_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActRequest {
    pub action: Action,
    /// Revision the client last saw; a stale value is rejected.
    pub revision: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    HumanTurn,
    AgentThinking,
    GameOver,
}

/// Everything the human may see about a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPayload {
    pub version: u32,
    pub session_id: String,
    /// Number of history events; changes with every state change.
    pub revision: u64,
    pub status: SessionStatus,
    pub human_seat: PlayerId,
    pub agent: String,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
    pub view: PlayerView,
    pub history: Vec<HistoryEvent>,
    /// Both hands in full, only once the game is over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_hands: Option<Vec<Vec<Tile>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActResponse {
    pub version: u32,
    /// Events produced by this submission, the human's move first, then the agent's turn.
    pub events: Vec<HistoryEvent>,
    pub session: SessionPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintsPayload {
    pub version: u32,
    pub session_id: String,
    pub revision: u64,
    pub candidates: Vec<CandidateSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub status: SessionStatus,
    pub revision: u64,
    pub agent: String,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionList {
    pub version: u32,
    pub sessions: Vec<SessionSummary>,
}

/// One line of an event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamItem {
    /// History event number `index` (0-based); resume with `from = index + 1`.
    Event { index: u64, event: HistoryEvent },
    Status { revision: u64, status: SessionStatus },
    GameOver { winner: Option<PlayerId>, final_hands: Vec<Vec<Tile>> },
    /// The subscriber fell behind and was disconnected.
    Dropped { resume_from: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub version: u32,
    #[serde(flatten)]
    pub item: StreamItem,
}

impl From<StreamItem> for StreamRecord {
    fn from(item: StreamItem) -> Self {
        Self { version: PROTOCOL_VERSION, item }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub version: u32,
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legal_actions: Option<Vec<Action>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_revision: Option<u64>,
}
