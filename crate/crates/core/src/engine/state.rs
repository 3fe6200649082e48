use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tile::{card_sort_key, Color, LabelSet, Tile, TileLabel};
use super::EngineError;

pub type PlayerId = usize;

pub const NUM_PLAYERS: usize = 2;
pub const DECK_SIZE: usize = 26;
pub const DEFAULT_HAND_SIZE: usize = 4;

pub const REWARD_WIN: f64 = 3.0;
pub const REWARD_LOSS: f64 = -3.0;
pub const REWARD_CORRECT: f64 = 0.2;
pub const REWARD_WRONG: f64 = -0.5;
pub const REWARD_PLACE: f64 = 0.0;

pub fn opponent(player: PlayerId) -> PlayerId {
    1 - player
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandSlot {
    pub tile: Tile,
    pub revealed: bool,
    /// Labels guessed incorrectly at this slot; travels with the tile when indices shift.
    pub wrong_guesses: LabelSet,
}

impl HandSlot {
    pub fn hidden(tile: Tile) -> Self {
        Self { tile, revealed: false, wrong_guesses: LabelSet::EMPTY }
    }
}

/// Inserts `slot` at the position that keeps `hand` sorted and returns that index.
pub fn insert_card(hand: &mut Vec<HandSlot>, slot: HandSlot) -> usize {
    let key = card_sort_key(&slot.tile);
    let index = hand.partition_point(|s| card_sort_key(&s.tile) < key);
    hand.insert(index, slot);
    index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Place,
    Guess {
        position: usize,
        #[serde(rename = "card")]
        label: TileLabel,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Draw { color: Color },
    Guess { position: usize, label: TileLabel, correct: bool },
    Place { revealed: bool },
    /// The actor submitted an illegal action and lost on the spot.
    Forfeit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub actor: PlayerId,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl HistoryEvent {
    /// Draws are generated by the engine; every other event corresponds to a submitted action.
    pub fn is_automatic(&self) -> bool {
        matches!(self.kind, EventKind::Draw { .. })
    }
}

/// What a player sees of an opponent slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum VisibleTile {
    Hidden { color: Color },
    Revealed { label: TileLabel },
}

impl VisibleTile {
    pub fn color(&self) -> Color {
        match *self {
            VisibleTile::Hidden { color } => color,
            VisibleTile::Revealed { label } => label.color(),
        }
    }

    pub fn label(&self) -> Option<TileLabel> {
        match *self {
            VisibleTile::Hidden { .. } => None,
            VisibleTile::Revealed { label } => Some(label),
        }
    }
}

/// The part of the game state one player is entitled to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerView {
    pub player: PlayerId,
    pub current_player: PlayerId,
    pub hand: Vec<Tile>,
    pub revealed_self: Vec<bool>,
    pub opponent_hand_visible: Vec<VisibleTile>,
    pub opponent_revealed: Vec<bool>,
    /// Every wrong guess at an opponent slot was made by this player.
    pub opponent_wrong_guesses: Vec<LabelSet>,
    pub deck_size: usize,
    pub drawn_card: Option<Tile>,
    pub can_guess_again: bool,
    pub legal_actions: Vec<Action>,
    pub game_over: bool,
    pub winner: Option<PlayerId>,
}

impl PlayerView {
    pub fn is_my_turn(&self) -> bool {
        !self.game_over && self.current_player == self.player
    }

    /// Labels whose location is known to this player: every revealed tile, its own
    /// hand, and its drawn card.
    pub fn accounted_labels(&self) -> LabelSet {
        let mut set: LabelSet = self.hand.iter().map(Tile::label).collect();
        set = set.union(self.opponent_hand_visible.iter().filter_map(VisibleTile::label).collect());
        if let Some(tile) = &self.drawn_card {
            set.insert(tile.label());
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// View for whoever acts next (the actor itself once the game is over).
    pub next_view: PlayerView,
}

/// Reward and termination of one applied action, without building a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub actor: PlayerId,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    hands: [Vec<HandSlot>; NUM_PLAYERS],
    deck: Vec<Tile>,
    current_player: PlayerId,
    drawn_card: Option<Tile>,
    can_guess_again: bool,
    history: Vec<HistoryEvent>,
    game_over: bool,
    winner: Option<PlayerId>,
    rng_seed: u64,
    hand_size: usize,
}

fn sample_joker_value(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = rng.random_range(-0.5..11.5);
        if (v - v.round()).abs() > 1e-6 {
            return v;
        }
    }
}

impl GameState {
    /// Shuffles and deals a fresh game, then starts player 0's turn with a draw.
    pub fn new(seed: u64, hand_size: usize) -> Result<Self, EngineError> {
        if hand_size == 0 || NUM_PLAYERS * hand_size > DECK_SIZE {
            return Err(EngineError::Config(format!(
                "hand_size must be in 1..={}, got {hand_size}",
                DECK_SIZE / NUM_PLAYERS
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let black_joker = sample_joker_value(&mut rng);
        let white_joker = sample_joker_value(&mut rng);
        let mut deck = Vec::with_capacity(DECK_SIZE);
        for color in Color::ALL {
            for v in 0..12 {
                deck.push(Tile::number(color, v)?);
            }
            let jv = if color == Color::Black { black_joker } else { white_joker };
            deck.push(Tile::joker(color, jv)?);
        }
        deck.shuffle(&mut rng);

        let mut hands: [Vec<HandSlot>; NUM_PLAYERS] = Default::default();
        for _ in 0..hand_size {
            for hand in hands.iter_mut() {
                let tile = deck.pop().expect("deck holds enough tiles for the deal");
                insert_card(hand, HandSlot::hidden(tile));
            }
        }
        let mut state = Self {
            hands,
            deck,
            current_player: 0,
            drawn_card: None,
            can_guess_again: false,
            history: Vec::new(),
            game_over: false,
            winner: None,
            rng_seed: seed,
            hand_size,
        };
        state.begin_turn();
        Ok(state)
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn hand_size(&self) -> usize {
        self.hand_size
    }

    pub fn hand(&self, player: PlayerId) -> &[HandSlot] {
        &self.hands[player]
    }

    pub fn deck(&self) -> &[Tile] {
        &self.deck
    }

    pub fn current_player(&self) -> PlayerId {
        self.current_player
    }

    pub fn drawn_card(&self) -> Option<&Tile> {
        self.drawn_card.as_ref()
    }

    pub fn can_guess_again(&self) -> bool {
        self.can_guess_again
    }

    pub fn history(&self) -> &[HistoryEvent] {
        &self.history
    }

    pub fn is_over(&self) -> bool {
        self.game_over
    }

    pub fn winner(&self) -> Option<PlayerId> {
        self.winner
    }

    pub fn hidden_count(&self, player: PlayerId) -> usize {
        self.hands[player].iter().filter(|s| !s.revealed).count()
    }

    /// Every tile currently in play, in no particular order.
    pub fn all_tiles(&self) -> Vec<Tile> {
        let mut tiles: Vec<Tile> = self.hands.iter().flatten().map(|s| s.tile).collect();
        tiles.extend(self.deck.iter().copied());
        tiles.extend(self.drawn_card);
        tiles
    }

    fn begin_turn(&mut self) {
        self.can_guess_again = false;
        self.drawn_card = self.deck.pop();
        if let Some(tile) = &self.drawn_card {
            self.history.push(HistoryEvent {
                actor: self.current_player,
                kind: EventKind::Draw { color: tile.color() },
            });
        }
    }

    fn pass_turn(&mut self) {
        self.current_player = opponent(self.current_player);
        self.begin_turn();
    }

    fn finish(&mut self, winner: PlayerId) {
        self.game_over = true;
        self.winner = Some(winner);
        self.can_guess_again = false;
    }

    /// Labels the given player can place without looking at hidden information.
    pub fn accounted_labels(&self, player: PlayerId) -> LabelSet {
        let mut set: LabelSet = self.hands[player].iter().map(|s| s.tile.label()).collect();
        for slot in &self.hands[opponent(player)] {
            if slot.revealed {
                set.insert(slot.tile.label());
            }
        }
        if player == self.current_player {
            if let Some(tile) = &self.drawn_card {
                set.insert(tile.label());
            }
        }
        set
    }

    pub fn is_legal(&self, action: Action) -> bool {
        if self.game_over {
            return false;
        }
        match action {
            Action::Place => self.drawn_card.is_some(),
            Action::Guess { position, label } => {
                let opp = &self.hands[opponent(self.current_player)];
                match opp.get(position) {
                    Some(slot) => {
                        !slot.revealed
                            && !slot.wrong_guesses.contains(label)
                            && !self.accounted_labels(self.current_player).contains(label)
                    }
                    None => false,
                }
            }
        }
    }

    /// Legal actions for the player to move, guesses in (position, label) order then Place.
    pub fn legal_actions(&self) -> Result<Vec<Action>, EngineError> {
        if self.game_over {
            return Err(EngineError::GameOver);
        }
        Ok(self.legal_actions_unchecked())
    }

    fn legal_actions_unchecked(&self) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.game_over {
            return actions;
        }
        let accounted = self.accounted_labels(self.current_player);
        for (position, slot) in self.hands[opponent(self.current_player)].iter().enumerate() {
            if slot.revealed {
                continue;
            }
            let excluded = accounted.union(slot.wrong_guesses);
            actions.extend(
                TileLabel::all()
                    .filter(|l| !excluded.contains(*l))
                    .map(|label| Action::Guess { position, label }),
            );
        }
        if self.drawn_card.is_some() {
            actions.push(Action::Place);
        }
        actions
    }

    pub fn view(&self, player: PlayerId) -> PlayerView {
        let own = &self.hands[player];
        let opp = &self.hands[opponent(player)];
        let acting = player == self.current_player;
        PlayerView {
            player,
            current_player: self.current_player,
            hand: own.iter().map(|s| s.tile).collect(),
            revealed_self: own.iter().map(|s| s.revealed).collect(),
            opponent_hand_visible: opp
                .iter()
                .map(|s| {
                    if s.revealed {
                        VisibleTile::Revealed { label: s.tile.label() }
                    } else {
                        VisibleTile::Hidden { color: s.tile.color() }
                    }
                })
                .collect(),
            opponent_revealed: opp.iter().map(|s| s.revealed).collect(),
            opponent_wrong_guesses: opp.iter().map(|s| s.wrong_guesses).collect(),
            deck_size: self.deck.len(),
            drawn_card: if acting { self.drawn_card } else { None },
            can_guess_again: acting && self.can_guess_again,
            legal_actions: if acting { self.legal_actions_unchecked() } else { Vec::new() },
            game_over: self.game_over,
            winner: self.winner,
        }
    }

    /// Applies an action for the player to move and returns the reward it earned.
    ///
    /// Illegal actions end the game with a loss for the actor.
    pub fn apply(&mut self, action: Action) -> Result<Transition, EngineError> {
        if self.game_over {
            return Err(EngineError::GameOver);
        }
        let actor = self.current_player;
        if !self.is_legal(action) {
            self.forfeit();
            return Ok(Transition { actor, reward: REWARD_LOSS, done: true });
        }
        let reward = match action {
            Action::Guess { position, label } => self.apply_guess(position, label),
            Action::Place => self.apply_place(),
        };
        Ok(Transition { actor, reward, done: self.game_over })
    }

    /// Like [`GameState::apply`] but also returns the view of the next player to act.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EngineError> {
        let t = self.apply(action)?;
        Ok(StepOutcome { reward: t.reward, done: t.done, next_view: self.view(self.current_player) })
    }

    /// Ends the game with a loss for the player to move.
    pub fn forfeit(&mut self) {
        let actor = self.current_player;
        self.history.push(HistoryEvent { actor, kind: EventKind::Forfeit });
        self.finish(opponent(actor));
    }

    fn apply_guess(&mut self, position: usize, label: TileLabel) -> f64 {
        let actor = self.current_player;
        let opp = opponent(actor);
        let slot = &mut self.hands[opp][position];
        let correct = slot.tile.label() == label;
        self.history.push(HistoryEvent { actor, kind: EventKind::Guess { position, label, correct } });
        if correct {
            slot.revealed = true;
            self.can_guess_again = true;
            if self.hidden_count(opp) == 0 {
                self.finish(actor);
                return REWARD_WIN;
            }
            return REWARD_CORRECT;
        }
        slot.wrong_guesses.insert(label);
        match self.drawn_card.take() {
            Some(tile) => {
                insert_card(&mut self.hands[actor], HandSlot { tile, revealed: true, wrong_guesses: LabelSet::EMPTY });
            }
            None => {
                let leftmost = self.hands[actor].iter_mut().find(|s| !s.revealed);
                leftmost.expect("a player still in the game has a hidden tile").revealed = true;
            }
        }
        if self.hidden_count(actor) == 0 {
            self.finish(opp);
            return REWARD_LOSS;
        }
        self.pass_turn();
        REWARD_WRONG
    }

    fn apply_place(&mut self) -> f64 {
        let actor = self.current_player;
        let tile = self.drawn_card.take().expect("Place is legal only with a drawn card");
        let revealed = !self.can_guess_again;
        insert_card(&mut self.hands[actor], HandSlot { tile, revealed, wrong_guesses: LabelSet::EMPTY });
        self.history.push(HistoryEvent { actor, kind: EventKind::Place { revealed } });
        self.pass_turn();
        REWARD_PLACE
    }
}

/// Convenience wrapper matching [`GameState::new`].
pub fn new_game(seed: u64, hand_size: usize) -> Result<GameState, EngineError> {
    GameState::new(seed, hand_size)
}

/// Rebuilds a game from its seed and event log, checking every event along the way.
///
/// Trailing engine-generated draws may be omitted from `events`.
pub fn replay(seed: u64, hand_size: usize, events: &[HistoryEvent]) -> Result<GameState, EngineError> {
    let mut state = GameState::new(seed, hand_size)?;
    for (index, event) in events.iter().enumerate() {
        let mismatch = |reason: &str| EngineError::Replay { index, reason: reason.to_string() };
        if index < state.history.len() {
            if state.history[index] != *event {
                return Err(mismatch("event differs from the engine's own record"));
            }
            continue;
        }
        if state.game_over {
            return Err(mismatch("event after the game ended"));
        }
        if event.actor != state.current_player {
            return Err(mismatch("actor is not the player to move"));
        }
        match event.kind {
            EventKind::Draw { .. } => return Err(mismatch("draw not produced by the engine")),
            EventKind::Forfeit => state.forfeit(),
            EventKind::Guess { position, label, .. } => {
                let action = Action::Guess { position, label };
                if !state.is_legal(action) {
                    return Err(mismatch("guess is not legal at this point"));
                }
                state.apply(action)?;
            }
            EventKind::Place { .. } => {
                if !state.is_legal(Action::Place) {
                    return Err(mismatch("place is not legal at this point"));
                }
                state.apply(Action::Place)?;
            }
        }
        if state.history.get(index) != Some(event) {
            return Err(mismatch("recorded outcome differs from the replayed one"));
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(label: &str) -> HandSlot {
        let label: TileLabel = label.parse().unwrap();
        HandSlot::hidden(Tile::number(label.color(), label.value().unwrap()).unwrap())
    }

    fn labels(hand: &[HandSlot]) -> Vec<String> {
        hand.iter().map(|s| s.tile.label().to_string()).collect()
    }

    #[test]
    fn insert_card_respects_color_tiebreak() {
        let mut hand = vec![slot("B1"), slot("W5")];
        assert_eq!(insert_card(&mut hand, slot("B5")), 1);
        assert_eq!(labels(&hand), ["B1", "B5", "W5"]);
    }

    #[test]
    fn insert_into_empty_hand() {
        let mut hand = Vec::new();
        assert_eq!(insert_card(&mut hand, slot("W9")), 0);
    }

    #[test]
    fn insert_card_keeps_wrong_guesses_with_their_slot() {
        let mut hand = vec![slot("B2"), slot("W8")];
        hand[1].wrong_guesses.insert("W7".parse().unwrap());
        insert_card(&mut hand, slot("B4"));
        assert!(hand[2].wrong_guesses.contains("W7".parse().unwrap()));
        assert!(hand[0].wrong_guesses.is_empty());
        assert!(hand[1].wrong_guesses.is_empty());
    }

    #[test]
    fn new_game_deals_sorted_hands_and_draws_for_first_player() {
        let g = GameState::new(42, 4).unwrap();
        for p in 0..2 {
            assert_eq!(g.hand(p).len(), 4);
            assert!(g.hand(p).windows(2).all(|w| w[0].tile.sort_key() < w[1].tile.sort_key()));
        }
        assert!(g.drawn_card().is_some());
        assert_eq!(g.deck().len(), 26 - 8 - 1);
        assert_eq!(g.history().len(), 1);
        assert!(!g.is_over());
    }

    #[test]
    fn new_game_is_deterministic() {
        assert_eq!(GameState::new(7, 4).unwrap(), GameState::new(7, 4).unwrap());
        assert_ne!(GameState::new(7, 4).unwrap(), GameState::new(8, 4).unwrap());
    }

    #[test]
    fn full_deal_leaves_an_empty_deck() {
        let g = GameState::new(3, 13).unwrap();
        assert_eq!(g.deck().len(), 0);
        assert!(g.drawn_card().is_none());
        let legal = g.legal_actions().unwrap();
        assert!(!legal.is_empty());
        assert!(!legal.contains(&Action::Place));
    }

    #[test]
    fn bad_hand_size_is_a_config_error() {
        assert!(matches!(GameState::new(1, 0), Err(EngineError::Config(_))));
        assert!(matches!(GameState::new(1, 14), Err(EngineError::Config(_))));
    }

    #[test]
    fn jokers_never_sit_on_integers() {
        for seed in 0..200 {
            let g = GameState::new(seed, 4).unwrap();
            for t in g.all_tiles() {
                if let Some(v) = t.joker_value() {
                    assert!(v > -0.5 && v < 11.5 && (v - v.round()).abs() > 1e-6);
                }
            }
        }
    }

    fn correct_guess(g: &GameState) -> Action {
        let opp = g.hand(opponent(g.current_player()));
        let (position, s) = opp.iter().enumerate().find(|(_, s)| !s.revealed).unwrap();
        Action::Guess { position, label: s.tile.label() }
    }

    fn wrong_guess(g: &GameState) -> Action {
        g.legal_actions()
            .unwrap()
            .into_iter()
            .find(|a| match *a {
                Action::Guess { position, label } => {
                    g.hand(opponent(g.current_player()))[position].tile.label() != label
                }
                Action::Place => false,
            })
            .unwrap()
    }

    #[test]
    fn correct_guess_rewards_and_keeps_turn() {
        let mut g = GameState::new(11, 4).unwrap();
        let out = g.step(correct_guess(&g)).unwrap();
        assert_eq!(out.reward, REWARD_CORRECT);
        assert!(!out.done);
        assert_eq!(g.current_player(), 0);
        assert!(g.can_guess_again());
        assert!(g.legal_actions().unwrap().contains(&Action::Place));
    }

    #[test]
    fn clearing_the_opponent_wins_with_terminal_reward_only() {
        let mut g = GameState::new(5, 4).unwrap();
        let mut rewards = Vec::new();
        while !g.is_over() {
            rewards.push(g.step(correct_guess(&g)).unwrap().reward);
        }
        assert_eq!(rewards, [0.2, 0.2, 0.2, 3.0]);
        assert_eq!(g.winner(), Some(0));
    }

    #[test]
    fn wrong_guess_reveals_drawn_card_and_passes() {
        let mut g = GameState::new(9, 4).unwrap();
        let drawn = *g.drawn_card().unwrap();
        let action = wrong_guess(&g);
        let out = g.step(action).unwrap();
        assert_eq!(out.reward, REWARD_WRONG);
        assert_eq!(g.current_player(), 1);
        let slot = g.hand(0).iter().find(|s| s.tile == drawn).unwrap();
        assert!(slot.revealed);
        assert_eq!(g.hand(0).len(), 5);
        if let Action::Guess { position, label } = action {
            assert!(g.hand(1)[position].wrong_guesses.contains(label));
        }
    }

    #[test]
    fn place_after_correct_guess_is_hidden() {
        let mut g = GameState::new(13, 4).unwrap();
        let drawn = *g.drawn_card().unwrap();
        g.step(correct_guess(&g)).unwrap();
        let out = g.step(Action::Place).unwrap();
        assert_eq!(out.reward, REWARD_PLACE);
        assert!(!g.hand(0).iter().find(|s| s.tile == drawn).unwrap().revealed);
        assert_eq!(g.history().last().unwrap().kind, EventKind::Draw { color: g.drawn_card().unwrap().color() });
        let replayed = replay(13, 4, g.history()).unwrap();
        assert!(!replayed.hand(0).iter().find(|s| s.tile == drawn).unwrap().revealed);
    }

    #[test]
    fn place_at_turn_start_is_revealed() {
        let mut g = GameState::new(13, 4).unwrap();
        let drawn = *g.drawn_card().unwrap();
        g.step(Action::Place).unwrap();
        assert!(g.hand(0).iter().find(|s| s.tile == drawn).unwrap().revealed);
    }

    #[test]
    fn wrong_guess_without_drawn_card_reveals_leftmost_hidden() {
        let mut g = GameState::new(21, 13).unwrap();
        assert!(g.drawn_card().is_none());
        let action = wrong_guess(&g);
        g.step(action).unwrap();
        assert!(g.hand(0)[0].revealed);
        assert!(g.hand(0)[1..].iter().all(|s| !s.revealed));
    }

    #[test]
    fn illegal_action_forfeits() {
        let mut g = GameState::new(2, 4).unwrap();
        let out = g.step(Action::Guess { position: 12, label: "B0".parse().unwrap() }).unwrap();
        assert_eq!(out.reward, REWARD_LOSS);
        assert!(out.done);
        assert_eq!(g.winner(), Some(1));
        assert!(matches!(g.legal_actions(), Err(EngineError::GameOver)));
        assert!(matches!(g.step(Action::Place), Err(EngineError::GameOver)));
        assert_eq!(replay(2, 4, g.history()).unwrap(), g);
    }

    #[test]
    fn elimination_leaves_single_guess() {
        // Build a position where only the last opponent slot is hidden and 25 labels are excluded.
        let mut g = GameState::new(17, 4).unwrap();
        let opp = opponent(g.current_player());
        let n = g.hands[opp].len();
        for s in &mut g.hands[opp][..n - 1] {
            s.revealed = true;
        }
        let truth = g.hands[opp][n - 1].tile.label();
        for l in TileLabel::all().filter(|l| *l != truth) {
            g.hands[opp][n - 1].wrong_guesses.insert(l);
        }
        let legal = g.legal_actions().unwrap();
        let guesses: Vec<_> = legal.iter().filter(|a| matches!(a, Action::Guess { .. })).collect();
        assert_eq!(guesses, [&Action::Guess { position: n - 1, label: truth }]);
        assert!(legal.contains(&Action::Place));
    }

    #[test]
    fn view_hides_opponent_tiles() {
        let g = GameState::new(4, 4).unwrap();
        let v = g.view(1);
        assert!(v.opponent_hand_visible.iter().all(|t| t.label().is_none()));
        assert!(v.drawn_card.is_none());
        assert!(v.legal_actions.is_empty());
        assert!(!g.view(0).legal_actions.is_empty());
    }

    #[test]
    fn replay_of_empty_log_is_a_fresh_game() {
        assert_eq!(replay(99, 4, &[]).unwrap(), GameState::new(99, 4).unwrap());
    }

    #[test]
    fn replay_reports_first_tampered_event() {
        let mut g = GameState::new(31, 4).unwrap();
        g.step(wrong_guess(&g)).unwrap();
        g.step(Action::Place).unwrap();
        let mut events = g.history().to_vec();
        assert_eq!(replay(31, 4, &events).unwrap(), g);
        if let EventKind::Guess { correct, .. } = &mut events[1].kind {
            *correct = !*correct;
        }
        match replay(31, 4, &events) {
            Err(EngineError::Replay { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected replay error, got {other:?}"),
        }
    }
}
