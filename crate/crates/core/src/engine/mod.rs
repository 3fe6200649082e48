//! Two-player Da Vinci Code rules engine.
//!
//! [`GameState`] is a plain, seedable state machine: it is created by
//! [`GameState::new`], mutated only through [`GameState::apply`] / [`GameState::step`],
//! and can be rebuilt from its seed and history with [`replay`].

mod log;
mod state;
mod tile;

pub use log::{GameLog, LogHeader, LOG_FORMAT, LOG_VERSION};
pub use state::{
    insert_card, new_game, opponent, replay, Action, EventKind, GameState, HandSlot, HistoryEvent, PlayerId,
    PlayerView, StepOutcome, Transition, VisibleTile, DECK_SIZE, DEFAULT_HAND_SIZE, NUM_PLAYERS, REWARD_CORRECT,
    REWARD_LOSS, REWARD_PLACE, REWARD_WIN, REWARD_WRONG,
};
pub use tile::{card_sort_key, Color, LabelSet, Rank, SortKey, Tile, TileLabel};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid tile: {0}")]
    BadTile(String),
    #[error("invalid tile label {0:?}")]
    BadLabel(String),
    #[error("the game is already over")]
    GameOver,
    #[error("replay diverged at event {index}: {reason}")]
    Replay { index: usize, reason: String },
    #[error("malformed game log at line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
