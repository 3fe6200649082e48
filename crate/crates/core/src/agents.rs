//! Agent interface and the scripted policies.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deduction::{rank_slots, ConstraintView};
use crate::engine::{Action, Color, HistoryEvent, LabelSet, PlayerView, TileLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl AgentDecision {
    pub fn new(action: Action) -> Self {
        Self { action, rationale: None }
    }

    pub fn with_rationale(action: Action, rationale: impl Into<String>) -> Self {
        Self { action, rationale: Some(rationale.into()) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("no legal action available")]
    NoLegalAction,
    #[error("agent failed: {0}")]
    Failed(String),
}

/// Anything that can pick an action for the player whose turn it is.
pub trait Agent: Send {
    fn name(&self) -> &str;

    fn decide(&mut self, view: &PlayerView, history: &[HistoryEvent]) -> Result<AgentDecision, AgentError>;
}

/// Builds fresh agents for independent games; `seed` controls any internal randomness.
pub trait AgentFactory: Send + Sync {
    fn name(&self) -> String;

    fn build(&self, seed: u64) -> Result<Box<dyn Agent>, AgentError>;
}

pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// Uniform choice over the legal actions.
pub fn random_agent(view: &PlayerView, rng: &mut impl rand::Rng) -> Result<AgentDecision, AgentError> {
    view.legal_actions.choose(rng).copied().map(AgentDecision::new).ok_or(AgentError::NoLegalAction)
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, view: &PlayerView, _history: &[HistoryEvent]) -> Result<AgentDecision, AgentError> {
        random_agent(view, &mut self.rng)
    }
}

pub struct RandomFactory;

impl AgentFactory for RandomFactory {
    fn name(&self) -> String {
        "random".into()
    }

    fn build(&self, seed: u64) -> Result<Box<dyn Agent>, AgentError> {
        Ok(Box::new(RandomAgent::new(seed)))
    }
}

/// Ordering used to pick the median candidate: numbered labels by (value, Black before
/// White); jokers have no observable value and sort after every number.
fn candidate_order(label: TileLabel) -> (u8, u8) {
    let color = match label.color() {
        Color::Black => 0,
        Color::White => 1,
    };
    (label.value().unwrap_or(12), color)
}

/// Lower-middle element of the candidates in [`candidate_order`].
pub fn median_candidate(labels: impl IntoIterator<Item = TileLabel>) -> Option<TileLabel> {
    let mut sorted: Vec<TileLabel> = labels.into_iter().collect();
    sorted.sort_by_key(|l| candidate_order(*l));
    if sorted.is_empty() {
        return None;
    }
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Smallest-candidate-set, median-value guesser.
///
/// At the start of a turn it always guesses. After a correct guess it keeps guessing
/// only while some slot has a single candidate; otherwise it places the drawn tile.
pub fn heuristic_agent(view: &PlayerView) -> Result<AgentDecision, AgentError> {
    if view.legal_actions.is_empty() {
        return Err(AgentError::NoLegalAction);
    }
    let place_legal = view.legal_actions.contains(&Action::Place);
    let constraints = ConstraintView::from_view(view);
    let ranked = rank_slots(&constraints);
    let guess_for = |slot: usize, labels| {
        let label = median_candidate(LabelSet::iter(labels))?;
        let action = Action::Guess { position: slot, label };
        view.legal_actions.contains(&action).then_some(action)
    };
    let best = ranked.iter().find_map(|(slot, c)| guess_for(*slot, c.labels).map(|a| (a, c.labels.len())));
    match best {
        Some((action, size)) if !view.can_guess_again || size == 1 || !place_legal => Ok(
            AgentDecision::with_rationale(action, format!("smallest candidate set ({size}), median guess")),
        ),
        _ if place_legal => Ok(AgentDecision::with_rationale(Action::Place, "no forced guess; placing")),
        // Candidate sets are sound, so this only triggers on inconsistent views.
        _ => Ok(AgentDecision::with_rationale(view.legal_actions[0], "no candidate guess; first legal action")),
    }
}

pub struct HeuristicAgent;

impl Agent for HeuristicAgent {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn decide(&mut self, view: &PlayerView, _history: &[HistoryEvent]) -> Result<AgentDecision, AgentError> {
        heuristic_agent(view)
    }
}

pub struct HeuristicFactory;

impl AgentFactory for HeuristicFactory {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn build(&self, _seed: u64) -> Result<Box<dyn Agent>, AgentError> {
        Ok(Box::new(HeuristicAgent))
    }
}
