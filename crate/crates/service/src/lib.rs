//! HTTP session server for playing against the agents. Sessions are journaled as game
//! logs and restored by replay on startup; each session streams its events as NDJSON.

pub mod audit;
pub mod http;
pub mod protocol;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use davinci_core::engine::Action;

pub use http::router;
pub use protocol::*;
pub use store::SessionStore;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("illegal action {action:?}")]
    IllegalAction { action: Action, legal_actions: Vec<Action> },
    #[error("revision {submitted} is stale; current revision is {current}")]
    StaleRevision { submitted: u64, current: u64 },
    #[error("it is not the human player's turn")]
    NotYourTurn,
    #[error("the game is over")]
    GameOver,
    #[error("storage: {0}")]
    Storage(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Validation { .. } => "invalid_request",
            Self::IllegalAction { .. } => "illegal_action",
            Self::StaleRevision { .. } => "stale_revision",
            Self::NotYourTurn => "not_your_turn",
            Self::GameOver => "game_over",
            Self::Storage(_) => "storage_error",
            Self::Internal(_) => "internal_error",
        }
    }

    pub fn payload(&self) -> ErrorPayload {
        let mut p = ErrorPayload {
            version: PROTOCOL_VERSION,
            error: self.code().into(),
            message: self.to_string(),
            field: None,
            legal_actions: None,
            current_revision: None,
        };
        match self {
            Self::Validation { field, .. } => p.field = Some(field.clone()),
            Self::IllegalAction { legal_actions, .. } => p.legal_actions = Some(legal_actions.clone()),
            Self::StaleRevision { current, .. } => p.current_revision = Some(*current),
            _ => {}
        }
        p
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    /// Journal directory; sessions are memory-only without one.
    pub data_dir: Option<PathBuf>,
    /// Built web client to serve at `/`.
    pub static_dir: Option<PathBuf>,
}

/// Opens the store, reporting sessions that failed to restore on stderr.
pub fn open_store(config: &ServeConfig) -> Result<SessionStore, ServiceError> {
    match &config.data_dir {
        None => Ok(SessionStore::in_memory()),
        Some(dir) => {
            let (store, errors) = SessionStore::open(dir)?;
            for e in errors {
                eprintln!("skipping session: {e}");
            }
            Ok(store)
        }
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServeConfig) -> std::io::Result<()> {
    let store = open_store(&config).map_err(std::io::Error::other)?;
    let app = router(Arc::new(store), config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
