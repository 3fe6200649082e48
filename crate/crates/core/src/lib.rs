//! Da Vinci Code game system: rules engine, exact deduction over hidden tiles,
//! scripted agents, the token/action encodings used by learned agents, an LLM
//! agent gateway, and the head-to-head evaluation harness.

pub mod agents;
pub mod audit;
pub mod deduction;
pub mod encoding;
pub mod engine;
pub mod evaluation;
pub mod llm_gateway;

pub use engine::{Action, GameState, PlayerId, PlayerView, TileLabel};
