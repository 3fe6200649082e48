//! Agents backed by a trained actor.

use std::path::Path;
use std::sync::Arc;

use davinci_core::agents::{Agent, AgentDecision, AgentError, AgentFactory};
use davinci_core::encoding::{encode_view, index_to_action, legal_mask};
use davinci_core::engine::{HistoryEvent, PlayerView};

use crate::checkpoint;
use crate::encoder::Batch;
use crate::network::{greedy_action, row_stats, Network};
use crate::LearnError;

/// Plays the most probable legal action of the actor.
pub struct PpoAgent {
    actor: Arc<Network<f32>>,
    name: String,
}

impl PpoAgent {
    pub fn new(actor: Arc<Network<f32>>, name: impl Into<String>) -> Self {
        Self { actor, name: name.into() }
    }

    pub fn choose(&self, view: &PlayerView, history: &[HistoryEvent]) -> Result<usize, LearnError> {
        let state = encode_view(view, history)?;
        let mask = legal_mask(&view.legal_actions)?;
        let logits = self.actor.forward(&Batch::from_states([&state]))?;
        Ok(greedy_action(&row_stats(&logits, &mask)?.logp, &mask))
    }
}

impl Agent for PpoAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, view: &PlayerView, history: &[HistoryEvent]) -> Result<AgentDecision, AgentError> {
        if view.legal_actions.is_empty() {
            return Err(AgentError::NoLegalAction);
        }
        let index = self.choose(view, history).map_err(|e| AgentError::Failed(e.to_string()))?;
        let action = index_to_action(index).map_err(|e| AgentError::Failed(e.to_string()))?;
        Ok(AgentDecision::new(action))
    }
}

#[derive(Clone)]
pub struct PpoFactory {
    actor: Arc<Network<f32>>,
    name: String,
}

impl PpoFactory {
    pub fn new(actor: Network<f32>, name: impl Into<String>) -> Self {
        Self { actor: Arc::new(actor), name: name.into() }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self, LearnError> {
        let ckpt = checkpoint::load(path)?;
        Ok(Self::new(ckpt.model.actor, "ppo"))
    }
}

impl AgentFactory for PpoFactory {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn build(&self, _seed: u64) -> Result<Box<dyn Agent>, AgentError> {
        Ok(Box::new(PpoAgent::new(self.actor.clone(), self.name.clone())))
    }
}
