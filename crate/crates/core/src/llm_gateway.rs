//! Chat-completion endpoints as Da Vinci Code agents.
//!
//! A decision is one round trip: render the view into a prompt, send it through a
//! [`ChatClient`], and parse the reply. Replies that are not valid JSON, or that name an
//! illegal action, fall back to Place when it is legal and to a random legal guess
//! otherwise, so an [`LlmAgent`] always returns a legal action.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{Agent, AgentDecision, AgentError, AgentFactory};
use crate::engine::{Action, Color, EventKind, HistoryEvent, PlayerView, TileLabel, VisibleTile};

pub const RECENT_EVENTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackUsed {
    None,
    PlaceFallback,
    RandomGuessFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmAction {
    pub action: Action,
    pub raw_response: String,
    pub fallback_used: FallbackUsed,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("http error: {0}")]
    Http(String),
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("replay fixture diverged: {0}")]
    Replay(String),
}

/// Anything that answers a prompt with text.
pub trait ChatClient: Send {
    fn model(&self) -> &str;

    fn complete(&mut self, prompt: &PromptBundle) -> Result<String, TransportError>;
}

const SYSTEM_PROMPT: &str = "\
You are an expert Da Vinci Code player.

Respond with exactly one JSON object and nothing else, either
{\"action\":\"guess\",\"position\":2,\"card\":\"B5\"} or {\"action\":\"place\"}.
Only choose an action from the legal action list you are given.

Strategy: if the opponent still has unrevealed tiles, prioritize a guess.
Place ends your turn: after a correct guess it adds your drawn tile face down;
at the start of a turn it adds the drawn tile face up.

Input format: your hand (face-up tiles in brackets), the opponent's hand where
[B7] is a revealed tile, [W?] a hidden white tile, and [B?:!3 5] a hidden black tile
you have already guessed wrongly as B3 and B5; your drawn tile; and recent events.

Rules and facts:
- 26 tiles: B0-B11, W0-W11 and two jokers B- and W-. Every tile is unique.
- Each hand is sorted ascending by number; at equal numbers Black is left of White.
- A joker can sit anywhere in the order, but never between Bn and Wn of the same number.
- A correct guess reveals the tile and lets you guess again or place.
- A wrong guess reveals your drawn tile (or your leftmost hidden tile) and ends your turn.
- A player whose tiles are all revealed loses.

Decision heuristic:
1. For each unrevealed opponent slot, compute the set of values consistent with known
   information: revealed neighbours, ordering rules, your previous wrong guesses for that
   slot, and every tile revealed anywhere or held by you.
2. Select the slot with the smallest candidate set, breaking ties by the leftmost slot.
3. Guess the median value from that candidate set.";

fn wrong_guess_suffix(color: Color, wrong: impl Iterator<Item = TileLabel>) -> String {
    let parts: Vec<String> = wrong
        .map(|l| {
            if l.color() == color {
                l.value().map_or_else(|| "-".to_string(), |v| v.to_string())
            } else {
                l.to_string()
            }
        })
        .collect();
    if parts.is_empty() {
        String::new()
    } else {
        format!(":!{}", parts.join(" "))
    }
}

fn describe_event(event: &HistoryEvent, viewer: usize) -> String {
    let who = if event.actor == viewer { "You" } else { "Opponent" };
    match event.kind {
        EventKind::Draw { color } => {
            format!("{who} drew a {} tile.", if color == Color::Black { "black" } else { "white" })
        }
        EventKind::Guess { position, label, correct } => {
            let target = if event.actor == viewer { "opponent" } else { "your" };
            format!(
                "{who} guessed {target} position {position} is {label}: {}.",
                if correct { "correct" } else { "wrong" }
            )
        }
        EventKind::Place { revealed } => {
            format!("{who} placed the drawn tile {}.", if revealed { "face up" } else { "face down" })
        }
        EventKind::Forfeit => format!("{who} forfeited with an illegal move."),
    }
}

/// Renders the view as the state block of the user message.
pub fn render_state_string(view: &PlayerView, history: &[HistoryEvent]) -> String {
    let own: Vec<String> = view
        .hand
        .iter()
        .zip(&view.revealed_self)
        .map(|(t, r)| if *r { format!("[{}]", t.label()) } else { t.label().to_string() })
        .collect();
    let opp: Vec<String> = view
        .opponent_hand_visible
        .iter()
        .zip(&view.opponent_wrong_guesses)
        .map(|(slot, wrong)| match *slot {
            VisibleTile::Revealed { label } => format!("[{label}]"),
            VisibleTile::Hidden { color } => {
                format!("[{}?{}]", color.letter(), wrong_guess_suffix(color, wrong.iter()))
            }
        })
        .collect();
    let drawn = view.drawn_card.map_or_else(|| "none".to_string(), |t| t.label().to_string());
    let mut out = format!(
        "Your hand: {}\nOpponent hand: {}\nDrawn tile: {}\nDeck: {} tiles left\nCan guess again: {}\n",
        own.join(" "),
        opp.join(" "),
        drawn,
        view.deck_size,
        if view.can_guess_again { "yes" } else { "no" },
    );
    let start = history.len().saturating_sub(RECENT_EVENTS);
    out.push_str(&format!("Recent events ({}):\n", history.len() - start));
    for e in &history[start..] {
        out.push_str("- ");
        out.push_str(&describe_event(e, view.player));
        out.push('\n');
    }
    out
}

/// Renders the legal actions as a JSON array using the reply schema.
pub fn render_legal_actions(legal: &[Action]) -> String {
    serde_json::to_string(legal).expect("actions serialize")
}

pub fn build_prompt(view: &PlayerView, history: &[HistoryEvent]) -> PromptBundle {
    let user_text = format!(
        "{}Legal actions: {}\nReply with one JSON object.",
        render_state_string(view, history),
        render_legal_actions(&view.legal_actions)
    );
    PromptBundle { system_text: SYSTEM_PROMPT.to_string(), user_text }
}

/// First balanced `{...}` region that parses as a JSON object.
fn first_json_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let close = close?;
        if let Ok(v @ Value::Object(_)) = serde_json::from_str(&text[open..=close]) {
            return Some(v);
        }
        start = open + 1;
    }
    None
}

fn action_from_json(value: &Value) -> Option<Action> {
    let kind = value.get("action")?.as_str()?.trim().to_ascii_lowercase();
    match kind.as_str() {
        "place" => Some(Action::Place),
        "guess" => {
            let position = match value.get("position")? {
                Value::Number(n) => usize::try_from(n.as_u64()?).ok()?,
                Value::String(s) => s.trim().parse().ok()?,
                _ => return None,
            };
            let label = value.get("card")?.as_str()?.trim().to_ascii_uppercase().parse().ok()?;
            Some(Action::Guess { position, label })
        }
        _ => None,
    }
}

/// Parses a reply and guarantees a legal action through the fallback chain.
pub fn parse_response(
    text: &str,
    legal_actions: &[Action],
    rng: &mut impl rand::Rng,
) -> Result<LlmAction, AgentError> {
    let raw_response = text.to_string();
    if let Some(action) = first_json_object(text).as_ref().and_then(action_from_json) {
        if legal_actions.contains(&action) {
            return Ok(LlmAction { action, raw_response, fallback_used: FallbackUsed::None });
        }
    }
    fallback(legal_actions, rng, raw_response)
}

fn fallback(legal_actions: &[Action], rng: &mut impl rand::Rng, raw_response: String) -> Result<LlmAction, AgentError> {
    if legal_actions.contains(&Action::Place) {
        return Ok(LlmAction { action: Action::Place, raw_response, fallback_used: FallbackUsed::PlaceFallback });
    }
    let guesses: Vec<Action> =
        legal_actions.iter().copied().filter(|a| matches!(a, Action::Guess { .. })).collect();
    let action = *guesses.choose(rng).ok_or(AgentError::NoLegalAction)?;
    Ok(LlmAction { action, raw_response, fallback_used: FallbackUsed::RandomGuessFallback })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackStats {
    pub decisions: u64,
    pub place_fallbacks: u64,
    pub random_fallbacks: u64,
    pub transport_errors: u64,
}

impl FallbackStats {
    pub fn fallbacks(&self) -> u64 {
        self.place_fallbacks + self.random_fallbacks
    }

    pub fn fallback_rate(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.fallbacks() as f64 / self.decisions as f64
        }
    }

    fn record(&mut self, used: FallbackUsed, transport_failed: bool) {
        self.decisions += 1;
        match used {
            FallbackUsed::None => {}
            FallbackUsed::PlaceFallback => self.place_fallbacks += 1,
            FallbackUsed::RandomGuessFallback => self.random_fallbacks += 1,
        }
        if transport_failed {
            self.transport_errors += 1;
        }
    }
}

/// Fallback counters shared across agents, keyed by model name.
#[derive(Debug, Clone, Default)]
pub struct FallbackRegistry(Arc<Mutex<HashMap<String, FallbackStats>>>);

impl FallbackRegistry {
    pub fn get(&self, model: &str) -> FallbackStats {
        self.0.lock().expect("registry lock").get(model).copied().unwrap_or_default()
    }

    pub fn snapshot(&self) -> HashMap<String, FallbackStats> {
        self.0.lock().expect("registry lock").clone()
    }

    fn record(&self, model: &str, used: FallbackUsed, transport_failed: bool) {
        self.0.lock().expect("registry lock").entry(model.to_string()).or_default().record(used, transport_failed);
    }
}

/// One request/response pair, as persisted for audit and replayed in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub model: String,
    pub request: PromptBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Reads an exchange fixture: one JSON record per line.
pub fn read_exchanges<R: BufRead>(r: R) -> Result<Vec<Exchange>, TransportError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| TransportError::Replay(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TransportError::Replay(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_exchanges<W: Write>(mut w: W, exchanges: &[Exchange]) -> std::io::Result<()> {
    for e in exchanges {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Decides one move: render, one request, parse with fallback.
pub fn llm_agent(
    view: &PlayerView,
    history: &[HistoryEvent],
    client: &mut dyn ChatClient,
    rng: &mut impl rand::Rng,
) -> Result<(AgentDecision, Exchange, FallbackUsed), AgentError> {
    let prompt = build_prompt(view, history);
    let reply = client.complete(&prompt);
    let mut exchange = Exchange {
        timestamp: chrono::Utc::now(),
        model: client.model().to_string(),
        request: prompt,
        response: None,
        error: None,
    };
    let parsed = match reply {
        Ok(text) => {
            exchange.response = Some(text.clone());
            parse_response(&text, &view.legal_actions, rng)?
        }
        Err(e) => {
            exchange.error = Some(e.to_string());
            fallback(&view.legal_actions, rng, String::new())?
        }
    };
    let rationale = match parsed.fallback_used {
        FallbackUsed::None => "model reply".to_string(),
        other => format!("fallback: {}", serde_json::to_string(&other).unwrap_or_default().trim_matches('"')),
    };
    Ok((AgentDecision::with_rationale(parsed.action, rationale), exchange, parsed.fallback_used))
}

pub struct LlmAgent {
    name: String,
    client: Box<dyn ChatClient>,
    rng: ChaCha8Rng,
    stats: FallbackStats,
    registry: Option<FallbackRegistry>,
    exchanges: Vec<Exchange>,
    sink: Option<Box<dyn Write + Send>>,
}

impl LlmAgent {
    pub fn new(client: Box<dyn ChatClient>, seed: u64) -> Self {
        let name = format!("llm:{}", client.model());
        Self {
            name,
            client,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: FallbackStats::default(),
            registry: None,
            exchanges: Vec::new(),
            sink: None,
        }
    }

    pub fn with_registry(mut self, registry: FallbackRegistry) -> Self {
        self.registry = Some(registry);
        self
    }

    /// Appends every exchange to `sink` as one JSON line.
    pub fn with_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn stats(&self) -> FallbackStats {
        self.stats
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }
}

impl Agent for LlmAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, view: &PlayerView, history: &[HistoryEvent]) -> Result<AgentDecision, AgentError> {
        let (decision, exchange, used) = llm_agent(view, history, self.client.as_mut(), &mut self.rng)?;
        let transport_failed = exchange.error.is_some();
        self.stats.record(used, transport_failed);
        if let Some(registry) = &self.registry {
            registry.record(self.client.model(), used, transport_failed);
        }
        if let Some(sink) = self.sink.as_mut() {
            write_exchanges(&mut *sink, std::slice::from_ref(&exchange))
                .and_then(|_| sink.flush())
                .map_err(|e| AgentError::Failed(format!("exchange log: {e}")))?;
        }
        self.exchanges.push(exchange);
        Ok(decision)
    }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Extra request fields passed through verbatim (temperature, top_p, ...).
    #[serde(default = "default_params")]
    pub params: serde_json::Map<String, Value>,
}

fn default_key_env() -> String {
    "LLM_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

fn default_params() -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("temperature".into(), Value::from(0.0));
    m
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            params: default_params(),
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(TransportError::Config(format!("endpoint {:?} is not an http(s) URL", self.endpoint)));
        }
        if self.model.trim().is_empty() {
            return Err(TransportError::Config("model name is empty".into()));
        }
        Ok(())
    }
}

pub struct HttpChatClient {
    config: LlmConfig,
    http: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: LlmConfig) -> Result<Self, TransportError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok();
        Ok(Self { config, http, api_key })
    }

    pub fn request_body(&self, prompt: &PromptBundle) -> Value {
        let mut body = self.config.params.clone();
        body.insert("model".into(), Value::from(self.config.model.clone()));
        body.insert(
            "messages".into(),
            serde_json::json!([
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ]),
        );
        Value::Object(body)
    }
}

impl ChatClient for HttpChatClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&mut self, prompt: &PromptBundle) -> Result<String, TransportError> {
        let mut req = self.http.post(&self.config.endpoint).json(&self.request_body(prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Http(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Http(format!("status {status}")));
        }
        let body: Value = resp.json().map_err(|e| TransportError::BadResponse(e.to_string()))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::BadResponse("missing choices[0].message.content".into()))
    }
}

/// Client backed by a closure; used for mocks and fuzzing.
pub struct ScriptedClient<F> {
    model: String,
    respond: F,
}

impl<F> ScriptedClient<F>
where
    F: FnMut(&PromptBundle) -> Result<String, TransportError> + Send,
{
    pub fn new(model: impl Into<String>, respond: F) -> Self {
        Self { model: model.into(), respond }
    }
}

impl<F> ChatClient for ScriptedClient<F>
where
    F: FnMut(&PromptBundle) -> Result<String, TransportError> + Send,
{
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&mut self, prompt: &PromptBundle) -> Result<String, TransportError> {
        (self.respond)(prompt)
    }
}

/// Serves recorded exchanges in order, checking that each request matches its recording.
pub struct ReplayClient {
    model: String,
    exchanges: std::vec::IntoIter<Exchange>,
}

impl ReplayClient {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        let model = exchanges.first().map_or_else(|| "replay".to_string(), |e| e.model.clone());
        Self { model, exchanges: exchanges.into_iter() }
    }
}

impl ChatClient for ReplayClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&mut self, prompt: &PromptBundle) -> Result<String, TransportError> {
        let next = self.exchanges.next().ok_or_else(|| TransportError::Replay("fixture exhausted".into()))?;
        if next.request != *prompt {
            return Err(TransportError::Replay("request differs from the recording".into()));
        }
        match (next.response, next.error) {
            (Some(text), _) => Ok(text),
            (None, Some(err)) if err == TransportError::Timeout.to_string() => Err(TransportError::Timeout),
            (None, err) => Err(TransportError::Http(err.unwrap_or_default())),
        }
    }
}

/// Builds HTTP-backed LLM agents for evaluation runs.
pub struct LlmFactory {
    pub config: LlmConfig,
    pub registry: FallbackRegistry,
}

impl AgentFactory for LlmFactory {
    fn name(&self) -> String {
        format!("llm:{}", self.config.model)
    }

    fn build(&self, seed: u64) -> Result<Box<dyn Agent>, AgentError> {
        let client = HttpChatClient::new(self.config.clone()).map_err(|e| AgentError::Failed(e.to_string()))?;
        Ok(Box::new(LlmAgent::new(Box::new(client), seed).with_registry(self.registry.clone())))
    }
}
