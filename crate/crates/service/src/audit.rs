//! Information-hiding and restart checks over randomly played sessions.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use davinci_core::engine::{opponent, GameState, VisibleTile, NUM_PLAYERS};

use crate::protocol::{ActRequest, AgentSpec, CreateRequest, SessionPayload, SessionStatus};
use crate::store::SessionStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzSummary {
    pub sessions: usize,
    pub payloads: usize,
}

/// Labels the human must not learn: the opponent's hidden tiles, the undrawn deck and
/// the opponent's drawn card.
pub fn secret_labels(state: &GameState, human: usize) -> HashSet<String> {
    let opp = opponent(human);
    let mut out: HashSet<String> =
        state.hand(opp).iter().filter(|s| !s.revealed).map(|s| s.tile.label().to_string()).collect();
    out.extend(state.deck().iter().map(|t| t.label().to_string()));
    if state.current_player() == opp {
        out.extend(state.drawn_card().map(|t| t.label().to_string()));
    }
    out
}

/// Drops fields whose labels are public by the rules: announced guesses, the set of legal
/// guesses and the wrong guesses the human made.
fn scrub(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("legal_actions");
            map.remove("opponent_wrong_guesses");
            if map.get("kind").and_then(Value::as_str) == Some("guess") {
                map.remove("label");
            }
            map.values_mut().for_each(scrub);
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        _ => {}
    }
}

/// Checks one payload against the full engine state behind it.
pub fn check_payload(state: &GameState, payload: &SessionPayload) -> Result<(), String> {
    let id = &payload.session_id;
    if payload.status == SessionStatus::GameOver {
        let hands = payload.final_hands.as_ref().ok_or(format!("{id}: finished game without final hands"))?;
        for (p, hand) in hands.iter().enumerate().take(NUM_PLAYERS) {
            if *hand != state.hand(p).iter().map(|s| s.tile).collect::<Vec<_>>() {
                return Err(format!("{id}: final hand {p} differs from the engine"));
            }
        }
        return Ok(());
    }
    if payload.final_hands.is_some() {
        return Err(format!("{id}: final hands before the game ended"));
    }
    let human = payload.human_seat;
    if payload.view != state.view(human) {
        return Err(format!("{id}: payload view is not the human's view"));
    }
    for (slot, vis) in state.hand(opponent(human)).iter().zip(&payload.view.opponent_hand_visible) {
        let ok = match vis {
            VisibleTile::Hidden { color } => !slot.revealed && *color == slot.tile.color(),
            VisibleTile::Revealed { label } => slot.revealed && *label == slot.tile.label(),
        };
        if !ok {
            return Err(format!("{id}: opponent slot shown as {vis:?} but holds {}", slot.tile));
        }
    }
    let mut json = serde_json::to_value(payload).map_err(|e| e.to_string())?;
    scrub(&mut json);
    let text = json.to_string();
    for label in secret_labels(state, human) {
        if text.contains(&format!("\"{label}\"")) {
            return Err(format!("{id}: hidden label {label} appears in the payload"));
        }
    }
    // Jokers carry their sort value; only the human's own jokers may show one.
    let own_jokers = payload.view.hand.iter().chain(&payload.view.drawn_card).filter(|t| t.joker_value().is_some()).count();
    if text.matches("joker_value").count() != own_jokers {
        return Err(format!("{id}: an opponent joker value is exposed"));
    }
    Ok(())
}

fn random_move(store: &SessionStore, payload: &SessionPayload, rng: &mut ChaCha8Rng) -> Result<SessionPayload, String> {
    let action = *payload.view.legal_actions.choose(rng).ok_or("human has no legal action")?;
    store
        .submit(&payload.session_id, ActRequest { action, revision: payload.revision })
        .map(|r| r.session)
        .map_err(|e| e.to_string())
}

fn checked(store: &SessionStore, payload: &SessionPayload) -> Result<(), String> {
    let state = store.state(&payload.session_id).map_err(|e| e.to_string())?;
    check_payload(&state, payload)
}

/// Plays `sessions` games to the end with a random human against alternating random and
/// heuristic agents and seats, checking every payload and every hint set.
pub fn fuzz_sessions(sessions: usize, seed: u64) -> Result<FuzzSummary, String> {
    let store = SessionStore::in_memory();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut payloads = 0;
    for i in 0..sessions {
        let agent = if i % 2 == 0 { AgentSpec::Random } else { AgentSpec::Heuristic };
        let request = CreateRequest { agent, seed: Some(rng.random()), human_seat: Some(i % 2), hand_size: None };
        let mut payload = store.create(request).map_err(|e| e.to_string())?;
        loop {
            checked(&store, &payload)?;
            payloads += 1;
            if payload.status == SessionStatus::GameOver {
                break;
            }
            let hints = store.hints(&payload.session_id).map_err(|e| e.to_string())?;
            let state = store.state(&payload.session_id).map_err(|e| e.to_string())?;
            for c in hints.candidates {
                if !c.labels.contains(state.hand(opponent(payload.human_seat))[c.slot].tile.label()) {
                    return Err(format!("{}: hint for slot {} misses the true tile", payload.session_id, c.slot));
                }
            }
            payload = random_move(&store, &payload, &mut rng)?;
        }
    }
    Ok(FuzzSummary { sessions, payloads })
}

/// Journals `sessions` partly played games under `dir`, reopens the store and compares
/// every engine state and payload; then finishes every game and repeats the comparison.
/// Returns the number of sessions compared.
pub fn restart_check(dir: &Path, sessions: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut before = Vec::new();
    {
        let (store, errors) = SessionStore::open(dir).map_err(|e| e.to_string())?;
        if !errors.is_empty() {
            return Err(format!("fresh directory reported {} restore errors", errors.len()));
        }
        for i in 0..sessions {
            let agent = if i % 3 == 0 { AgentSpec::Heuristic } else { AgentSpec::Random };
            let request = CreateRequest { agent, seed: Some(rng.random()), human_seat: Some(i % 2), hand_size: None };
            let mut payload = store.create(request).map_err(|e| e.to_string())?;
            for _ in 0..rng.random_range(0..40) {
                if payload.status == SessionStatus::GameOver {
                    break;
                }
                payload = random_move(&store, &payload, &mut rng)?;
            }
            let state = store.state(&payload.session_id).map_err(|e| e.to_string())?;
            before.push((payload, state));
        }
    }
    let compare = |store: &SessionStore, expected: &[(SessionPayload, GameState)]| -> Result<(), String> {
        for (payload, state) in expected {
            let id = &payload.session_id;
            if store.state(id).map_err(|e| e.to_string())? != *state {
                return Err(format!("{id}: restored engine state differs"));
            }
            if store.view(id).map_err(|e| e.to_string())? != *payload {
                return Err(format!("{id}: restored payload differs"));
            }
        }
        Ok(())
    };
    let (store, errors) = SessionStore::open(dir).map_err(|e| e.to_string())?;
    if let Some(e) = errors.first() {
        return Err(format!("restore failed: {e}"));
    }
    compare(&store, &before)?;
    let mut after = Vec::new();
    for (payload, _) in &before {
        let mut p = payload.clone();
        while p.status != SessionStatus::GameOver {
            p = random_move(&store, &p, &mut rng)?;
        }
        after.push((p.clone(), store.state(&p.session_id).map_err(|e| e.to_string())?));
    }
    drop(store);
    let (store, _) = SessionStore::open(dir).map_err(|e| e.to_string())?;
    compare(&store, &after)?;
    Ok(before.len())
}
