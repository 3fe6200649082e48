//! In-memory sessions with per-session serialization, journaling and event fan-out.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use davinci_core::agents::{AgentFactory, HeuristicFactory, RandomFactory};
use davinci_core::deduction::{candidate_values, ConstraintView};
use davinci_core::engine::{opponent, GameLog, GameState, PlayerId, DEFAULT_HAND_SIZE, NUM_PLAYERS};
use davinci_core::evaluation::derive_seed;
use davinci_core::llm_gateway::{FallbackRegistry, LlmFactory};
use davinci_learn::agent::PpoFactory;

use crate::protocol::*;
use crate::ServiceError;

/// Buffered stream items per session before a slow subscriber is dropped.
pub const STREAM_BUFFER: usize = 256;

/// Upper bound on agent actions in one turn; turns end far sooner in practice.
const MAX_AGENT_ACTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionMeta {
    version: u32,
    session_id: String,
    agent: AgentSpec,
    seed: u64,
    human_seat: PlayerId,
    hand_size: usize,
    created_at: DateTime<Utc>,
}

struct Inner {
    state: GameState,
    updated_at: DateTime<Utc>,
    journal: Option<File>,
}

struct Session {
    meta: SessionMeta,
    agent: Arc<dyn AgentFactory>,
    inner: Mutex<Inner>,
    events: broadcast::Sender<StreamItem>,
}

/// A subscription: stored items from the requested index, then live items.
pub struct Subscription {
    pub backlog: Vec<StreamItem>,
    /// `None` once the game is over; the backlog then ends with [`StreamItem::GameOver`].
    pub live: Option<broadcast::Receiver<StreamItem>>,
    /// Index of the first event not in the backlog.
    pub next_index: u64,
}

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    journal_dir: Option<PathBuf>,
    llm_registry: FallbackRegistry,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Storage(format!("{}: {e}", path.display()))
}

fn invalid(field: &str, message: impl Into<String>) -> ServiceError {
    ServiceError::Validation { field: field.into(), message: message.into() }
}

fn build_factory(spec: &AgentSpec, registry: &FallbackRegistry) -> Result<Arc<dyn AgentFactory>, ServiceError> {
    Ok(match spec {
        AgentSpec::Random => Arc::new(RandomFactory),
        AgentSpec::Heuristic => Arc::new(HeuristicFactory),
        AgentSpec::Ppo { checkpoint } => {
            Arc::new(PpoFactory::from_checkpoint(checkpoint).map_err(|e| invalid("agent.checkpoint", e.to_string()))?)
        }
        AgentSpec::Llm(config) => {
            config.validate().map_err(|e| invalid("agent", e.to_string()))?;
            Arc::new(LlmFactory { config: config.clone(), registry: registry.clone() })
        }
    })
}

fn final_hands(state: &GameState) -> Vec<Vec<davinci_core::engine::Tile>> {
    (0..NUM_PLAYERS).map(|p| state.hand(p).iter().map(|s| s.tile).collect()).collect()
}

fn status_of(state: &GameState) -> SessionStatus {
    if state.is_over() {
        SessionStatus::GameOver
    } else {
        SessionStatus::HumanTurn
    }
}

impl Session {
    fn payload(&self, state: &GameState) -> SessionPayload {
        let over = state.is_over();
        SessionPayload {
            version: PROTOCOL_VERSION,
            session_id: self.meta.session_id.clone(),
            revision: state.history().len() as u64,
            status: status_of(state),
            human_seat: self.meta.human_seat,
            agent: self.agent.name(),
            seed: self.meta.seed,
            created_at: self.meta.created_at,
            view: state.view(self.meta.human_seat),
            history: state.history().to_vec(),
            final_hands: over.then(|| final_hands(state)),
        }
    }

    fn publish(&self, item: StreamItem) {
        // No receivers is fine.
        let _ = self.events.send(item);
    }

    fn publish_events(&self, state: &GameState, from: usize) {
        for (i, event) in state.history().iter().enumerate().skip(from) {
            self.publish(StreamItem::Event { index: i as u64, event: *event });
        }
    }

    /// Plays agent actions until the human is to move or the game ends. Agent failures
    /// and illegal choices forfeit the game for the agent.
    fn play_agent(&self, inner: &mut Inner) {
        let agent_seat = opponent(self.meta.human_seat);
        let mut actions = 0;
        while !inner.state.is_over() && inner.state.current_player() == agent_seat {
            let before = inner.state.history().len();
            self.publish(StreamItem::Status { revision: before as u64, status: SessionStatus::AgentThinking });
            let view = inner.state.view(agent_seat);
            let seed = derive_seed(self.meta.seed, before as u64);
            let decision =
                self.agent.build(seed).and_then(|mut agent| agent.decide(&view, inner.state.history()));
            match decision {
                Ok(d) if actions < MAX_AGENT_ACTIONS => {
                    inner.state.apply(d.action).expect("game is live");
                }
                _ => inner.state.forfeit(),
            }
            actions += 1;
            self.publish_events(&inner.state, before);
        }
    }

    fn journal(&self, inner: &mut Inner, from: usize) -> Result<(), ServiceError> {
        let Some(file) = inner.journal.as_mut() else {
            return Ok(());
        };
        let mut buf = Vec::new();
        for event in &inner.state.history()[from..] {
            serde_json::to_writer(&mut buf, event).expect("events serialize");
            buf.push(b'\n');
        }
        file.write_all(&buf)
            .and_then(|_| file.flush())
            .map_err(|e| ServiceError::Storage(format!("journal write failed: {e}")))
    }
}

fn meta_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.meta.json"))
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.log.ndjson"))
}

impl SessionStore {
    /// Sessions live only in memory.
    pub fn in_memory() -> Self {
        Self { sessions: RwLock::default(), journal_dir: None, llm_registry: FallbackRegistry::default() }
    }

    /// Journals sessions under `dir` and restores every session found there. Sessions
    /// that cannot be restored are reported and skipped.
    pub fn open(dir: &Path) -> Result<(Self, Vec<ServiceError>), ServiceError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let store = Self { journal_dir: Some(dir.to_path_buf()), ..Self::in_memory() };
        let mut errors = Vec::new();
        let mut metas: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".meta.json"))
            .collect();
        metas.sort();
        for path in metas {
            match store.restore(&path) {
                Ok(session) => {
                    store.sessions.write().unwrap().insert(session.meta.session_id.clone(), session);
                }
                Err(e) => errors.push(e),
            }
        }
        Ok((store, errors))
    }

    fn restore(&self, meta_file: &Path) -> Result<Arc<Session>, ServiceError> {
        let dir = self.journal_dir.as_deref().expect("restore needs a journal directory");
        let text = fs::read_to_string(meta_file).map_err(io_err(meta_file))?;
        let meta: SessionMeta =
            serde_json::from_str(&text).map_err(|e| ServiceError::Storage(format!("{}: {e}", meta_file.display())))?;
        let log_file = log_path(dir, &meta.session_id);
        let file = File::open(&log_file).map_err(io_err(&log_file))?;
        let log = GameLog::read_from(BufReader::new(file))
            .map_err(|e| ServiceError::Storage(format!("{}: {e}", log_file.display())))?;
        let state = log.replay().map_err(|e| ServiceError::Storage(format!("{}: {e}", log_file.display())))?;
        let updated_at = fs::metadata(&log_file).and_then(|m| m.modified()).map(DateTime::<Utc>::from).unwrap_or(meta.created_at);
        let agent = build_factory(&meta.agent, &self.llm_registry)?;
        let journal = OpenOptions::new().append(true).open(&log_file).map_err(io_err(&log_file))?;
        Ok(Arc::new(Session {
            meta,
            agent,
            inner: Mutex::new(Inner { state, updated_at, journal: Some(journal) }),
            events: broadcast::channel(STREAM_BUFFER).0,
        }))
    }

    pub fn llm_registry(&self) -> &FallbackRegistry {
        &self.llm_registry
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn create(&self, request: CreateRequest) -> Result<SessionPayload, ServiceError> {
        let human_seat = request.human_seat.unwrap_or(0);
        if human_seat >= NUM_PLAYERS {
            return Err(invalid("human_seat", format!("must be 0 or 1, got {human_seat}")));
        }
        let hand_size = request.hand_size.unwrap_or(DEFAULT_HAND_SIZE);
        let seed = request.seed.unwrap_or_else(rand_seed);
        let state = GameState::new(seed, hand_size).map_err(|e| invalid("hand_size", e.to_string()))?;
        let agent = build_factory(&request.agent, &self.llm_registry)?;
        let meta = SessionMeta {
            version: PROTOCOL_VERSION,
            session_id: uuid::Uuid::new_v4().to_string(),
            agent: request.agent,
            seed,
            human_seat,
            hand_size,
            created_at: Utc::now(),
        };
        let journal = match &self.journal_dir {
            Some(dir) => Some(self.start_journal(dir, &meta, &state)?),
            None => None,
        };
        let session = Arc::new(Session {
            meta,
            agent,
            inner: Mutex::new(Inner { state, updated_at: Utc::now(), journal }),
            events: broadcast::channel(STREAM_BUFFER).0,
        });
        let payload = {
            let mut inner = session.inner.lock().unwrap();
            let before = inner.state.history().len();
            session.play_agent(&mut inner);
            session.journal(&mut inner, before)?;
            session.payload(&inner.state)
        };
        self.sessions.write().unwrap().insert(session.meta.session_id.clone(), session);
        Ok(payload)
    }

    fn start_journal(&self, dir: &Path, meta: &SessionMeta, state: &GameState) -> Result<File, ServiceError> {
        let log_file = log_path(dir, &meta.session_id);
        let mut file = File::create(&log_file).map_err(io_err(&log_file))?;
        GameLog::from_state(state).write_to(&mut file).map_err(|e| ServiceError::Storage(e.to_string()))?;
        file.flush().map_err(io_err(&log_file))?;
        let meta_file = meta_path(dir, &meta.session_id);
        let tmp = meta_file.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(meta).expect("meta serializes")).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &meta_file).map_err(io_err(&meta_file))?;
        Ok(file)
    }

    pub fn view(&self, id: &str) -> Result<SessionPayload, ServiceError> {
        let session = self.get(id)?;
        let inner = session.inner.lock().unwrap();
        Ok(session.payload(&inner.state))
    }

    /// Full engine state, for diagnostics and restart checks. Not part of the wire protocol.
    pub fn state(&self, id: &str) -> Result<GameState, ServiceError> {
        Ok(self.get(id)?.inner.lock().unwrap().state.clone())
    }

    pub fn list(&self) -> SessionList {
        let sessions = self.sessions.read().unwrap();
        let mut out: Vec<SessionSummary> = sessions
            .values()
            .map(|s| {
                let inner = s.inner.lock().unwrap();
                SessionSummary {
                    session_id: s.meta.session_id.clone(),
                    status: status_of(&inner.state),
                    revision: inner.state.history().len() as u64,
                    agent: s.agent.name(),
                    updated_at: inner.updated_at,
                }
            })
            .collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        SessionList { version: PROTOCOL_VERSION, sessions: out }
    }

    /// Validates and applies a human action, then lets the agent move.
    pub fn submit(&self, id: &str, request: ActRequest) -> Result<ActResponse, ServiceError> {
        let session = self.get(id)?;
        let mut inner = session.inner.lock().unwrap();
        let revision = inner.state.history().len() as u64;
        if inner.state.is_over() {
            return Err(ServiceError::GameOver);
        }
        if request.revision != revision {
            return Err(ServiceError::StaleRevision { submitted: request.revision, current: revision });
        }
        if inner.state.current_player() != session.meta.human_seat {
            return Err(ServiceError::NotYourTurn);
        }
        if !inner.state.is_legal(request.action) {
            let legal = inner.state.legal_actions().unwrap_or_default();
            return Err(ServiceError::IllegalAction { action: request.action, legal_actions: legal });
        }
        let before = inner.state.history().len();
        inner.state.apply(request.action).expect("legality checked above");
        session.publish_events(&inner.state, before);
        session.play_agent(&mut inner);
        inner.updated_at = Utc::now();
        session.journal(&mut inner, before)?;
        let state = &inner.state;
        session.publish(StreamItem::Status { revision: state.history().len() as u64, status: status_of(state) });
        if state.is_over() {
            session.publish(StreamItem::GameOver { winner: state.winner(), final_hands: final_hands(state) });
        }
        Ok(ActResponse {
            version: PROTOCOL_VERSION,
            events: state.history()[before..].to_vec(),
            session: session.payload(state),
        })
    }

    /// Events from index `from` onward, followed by live updates.
    pub fn subscribe(&self, id: &str, from: u64) -> Result<Subscription, ServiceError> {
        let session = self.get(id)?;
        let inner = session.inner.lock().unwrap();
        // Subscribing under the lock means no event falls between backlog and live feed.
        let live = session.events.subscribe();
        let history = inner.state.history();
        let mut backlog: Vec<StreamItem> = history
            .iter()
            .enumerate()
            .skip(from as usize)
            .map(|(i, e)| StreamItem::Event { index: i as u64, event: *e })
            .collect();
        let state = &inner.state;
        backlog.push(StreamItem::Status { revision: history.len() as u64, status: status_of(state) });
        let over = state.is_over();
        if over {
            backlog.push(StreamItem::GameOver { winner: state.winner(), final_hands: final_hands(state) });
        }
        Ok(Subscription { backlog, live: (!over).then_some(live), next_index: history.len() as u64 })
    }

    pub fn hints(&self, id: &str) -> Result<HintsPayload, ServiceError> {
        let session = self.get(id)?;
        let inner = session.inner.lock().unwrap();
        let view = inner.state.view(session.meta.human_seat);
        let constraints = ConstraintView::from_view(&view);
        let candidates = (0..view.opponent_hand_visible.len())
            .filter(|&slot| !view.opponent_revealed[slot])
            .map(|slot| candidate_values(&constraints, slot).map_err(|e| ServiceError::Internal(e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(HintsPayload {
            version: PROTOCOL_VERSION,
            session_id: session.meta.session_id.clone(),
            revision: inner.state.history().len() as u64,
            candidates,
        })
    }
}

fn rand_seed() -> u64 {
    let id = uuid::Uuid::new_v4();
    let (hi, lo) = id.as_u64_pair();
    hi ^ lo
}
