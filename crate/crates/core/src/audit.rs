//! Whole-game invariant checks and random position sampling, shared by the test suites
//! and the `davinci` self-check commands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::random_agent;
use crate::engine::{
    card_sort_key, replay, GameState, PlayerId, PlayerView, Tile, TileLabel, REWARD_CORRECT, REWARD_LOSS,
    REWARD_PLACE, REWARD_WIN, REWARD_WRONG,
};
use crate::evaluation::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("seed {seed}, step {step}: {what}")]
pub struct AuditFailure {
    pub seed: u64,
    pub step: usize,
    pub what: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSummary {
    pub steps: usize,
    pub winner: PlayerId,
}

pub fn hands_sorted(state: &GameState) -> bool {
    (0..2).all(|p| state.hand(p).windows(2).all(|w| card_sort_key(&w[0].tile) < card_sort_key(&w[1].tile)))
}

/// Sorted labels plus joker values of every tile in play.
pub fn tile_inventory(state: &GameState) -> (Vec<TileLabel>, Vec<u64>) {
    let tiles = state.all_tiles();
    let mut labels: Vec<TileLabel> = tiles.iter().map(Tile::label).collect();
    labels.sort();
    let mut jokers: Vec<u64> = tiles.iter().filter_map(Tile::joker_value).map(f64::to_bits).collect();
    jokers.sort();
    (labels, jokers)
}

/// Plays random-vs-random from `seed`, checking sortedness, conservation, reward
/// closure, terminal zero-sum and replay determinism after every step.
pub fn audit_random_game(seed: u64, hand_size: usize, max_steps: usize) -> Result<AuditSummary, AuditFailure> {
    let fail = |step, what: String| AuditFailure { seed, step, what };
    let mut state = GameState::new(seed, hand_size).map_err(|e| fail(0, e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA0D1));
    let inventory = tile_inventory(&state);
    if inventory.0.len() != 26 || inventory.0.windows(2).any(|w| w[0] == w[1]) {
        return Err(fail(0, "initial deal is not the 26 distinct tiles".into()));
    }
    let mut step = 0;
    while !state.is_over() {
        if step == max_steps {
            return Err(fail(step, "game did not terminate".into()));
        }
        let actor = state.current_player();
        let view = state.view(actor);
        let action = random_agent(&view, &mut rng).map_err(|e| fail(step, e.to_string()))?.action;
        let t = state.apply(action).map_err(|e| fail(step, e.to_string()))?;
        step += 1;
        let allowed = [REWARD_WIN, REWARD_LOSS, REWARD_CORRECT, REWARD_WRONG, REWARD_PLACE];
        if !allowed.contains(&t.reward) {
            return Err(fail(step, format!("reward {} outside the reward set", t.reward)));
        }
        if t.done != state.is_over() {
            return Err(fail(step, "done flag disagrees with the state".into()));
        }
        if t.done {
            let won = state.winner() == Some(actor);
            let expected = if won { REWARD_WIN } else { REWARD_LOSS };
            if t.reward != expected {
                return Err(fail(step, format!("terminal reward {} for actor who won={won}", t.reward)));
            }
        } else if t.reward.abs() == REWARD_WIN {
            return Err(fail(step, "terminal-sized reward on a non-terminal step".into()));
        }
        if !hands_sorted(&state) {
            return Err(fail(step, "hand out of order".into()));
        }
        if tile_inventory(&state) != inventory {
            return Err(fail(step, "tile inventory changed".into()));
        }
    }
    let rebuilt = replay(seed, hand_size, state.history()).map_err(|e| fail(step, format!("replay: {e}")))?;
    if rebuilt != state {
        return Err(fail(step, "replay produced a different state".into()));
    }
    Ok(AuditSummary { steps: step, winner: state.winner().expect("finished game has a winner") })
}

/// A mid-game position seen by the player to move, with the opponent's true labels.
#[derive(Debug, Clone)]
pub struct SampledPosition {
    pub state: GameState,
    pub view: PlayerView,
    pub truth: Vec<TileLabel>,
}

impl SampledPosition {
    pub fn hidden_count(&self) -> usize {
        self.view.opponent_revealed.iter().filter(|r| !**r).count()
    }
}

/// Random-play position after a random number of steps, from the mover's seat.
pub fn sample_position(seed: u64) -> SampledPosition {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x9051));
    let hand_size = 3 + (seed % 3) as usize;
    let mut state = GameState::new(seed, hand_size).expect("valid hand size");
    let target = rand::Rng::random_range(&mut rng, 0..40);
    for _ in 0..target {
        let view = state.view(state.current_player());
        let action = random_agent(&view, &mut rng).expect("live game has actions").action;
        let before = state.clone();
        state.apply(action).expect("live game");
        if state.is_over() {
            state = before;
            break;
        }
    }
    let me = state.current_player();
    let view = state.view(me);
    let truth = state.hand(1 - me).iter().map(|s| s.tile.label()).collect();
    SampledPosition { state, view, truth }
}
