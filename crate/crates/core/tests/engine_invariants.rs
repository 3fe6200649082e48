use davinci_core::audit::{audit_random_game, hands_sorted, tile_inventory};
use davinci_core::engine::{
    replay, Action, EventKind, GameLog, GameState, HistoryEvent, TileLabel, REWARD_LOSS, REWARD_WIN,
};
use proptest::prelude::*;

#[test]
fn thousand_random_games_hold_every_invariant() {
    for seed in 0..1000 {
        audit_random_game(seed, 4, 5000).unwrap();
    }
}

#[test]
fn all_hand_sizes_play_out() {
    for hand_size in 1..=13 {
        for seed in 0..20 {
            audit_random_game(seed * 31 + hand_size as u64, hand_size, 5000).unwrap();
        }
    }
}

proptest! {
    #[test]
    fn replay_through_log_text_is_exact(seed in any::<u64>(), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..60)) {
        let mut g = GameState::new(seed, 4).unwrap();
        for pick in picks {
            if g.is_over() {
                break;
            }
            let legal = g.legal_actions().unwrap();
            g.apply(*pick.get(&legal)).unwrap();
        }
        let text = GameLog::from_state(&g).to_text();
        let back = GameLog::parse(&text).unwrap().replay().unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn illegal_actions_forfeit_with_loss(seed in any::<u64>(), position in 0usize..20, label in 0usize..26) {
        let mut g = GameState::new(seed, 4).unwrap();
        let action = Action::Guess { position, label: TileLabel::from_index(label).unwrap() };
        let legal = g.is_legal(action);
        let actor = g.current_player();
        let t = g.apply(action).unwrap();
        if !legal {
            prop_assert_eq!(t.reward, REWARD_LOSS);
            prop_assert!(t.done);
            prop_assert_eq!(g.winner(), Some(1 - actor));
            prop_assert_eq!(g.history().last().unwrap().kind, EventKind::Forfeit);
        }
        prop_assert!(hands_sorted(&g));
    }

    #[test]
    fn views_never_leak_hidden_opponent_labels(seed in any::<u64>(), steps in 0usize..40) {
        let mut g = GameState::new(seed, 4).unwrap();
        for i in 0..steps {
            if g.is_over() {
                break;
            }
            let legal = g.legal_actions().unwrap();
            g.apply(legal[(i * 7919) % legal.len()]).unwrap();
        }
        for p in 0..2 {
            let mut view = g.view(p);
            // Legal guesses and the viewer's own failed guesses name labels the viewer
            // chose, so leave them out of the scan.
            view.legal_actions.clear();
            view.opponent_wrong_guesses.clear();
            let json = serde_json::to_string(&view).unwrap();
            for slot in g.hand(1 - p) {
                let label = slot.tile.label().to_string();
                if !slot.revealed && !g.is_over() {
                    prop_assert!(!view.accounted_labels().contains(slot.tile.label()));
                    prop_assert!(!json.contains(&format!("\"{label}\"")), "leaked {}", label);
                }
            }
        }
    }
}

#[test]
fn inventory_is_the_full_tile_set_at_start() {
    let g = GameState::new(5, 4).unwrap();
    let (labels, jokers) = tile_inventory(&g);
    assert_eq!(labels, TileLabel::all().collect::<Vec<_>>());
    assert_eq!(jokers.len(), 2);
}

#[test]
fn terminal_rewards_are_zero_sum() {
    for seed in 0..200 {
        let mut g = GameState::new(seed, 4).unwrap();
        let mut last_reward = [0.0f64; 2];
        let mut i = 0usize;
        while !g.is_over() {
            let legal = g.legal_actions().unwrap();
            let t = g.apply(legal[(i * 31 + seed as usize) % legal.len()]).unwrap();
            last_reward[t.actor] = t.reward;
            if t.done {
                // the non-acting player's final transition is re-labelled with the opposite sign
                let other = 1 - t.actor;
                last_reward[other] = -t.reward;
            }
            i += 1;
        }
        let w = g.winner().unwrap();
        assert_eq!(last_reward[w], REWARD_WIN);
        assert_eq!(last_reward[1 - w], REWARD_LOSS);
    }
}

#[test]
fn tampered_log_names_the_first_bad_event() {
    let mut g = GameState::new(77, 4).unwrap();
    for _ in 0..10 {
        if g.is_over() {
            break;
        }
        let a = g.legal_actions().unwrap()[0];
        g.apply(a).unwrap();
    }
    let mut events: Vec<HistoryEvent> = g.history().to_vec();
    let idx = events.iter().position(|e| matches!(e.kind, EventKind::Guess { .. })).unwrap();
    if let EventKind::Guess { correct, .. } = &mut events[idx].kind {
        *correct = !*correct;
    }
    match replay(77, 4, &events) {
        Err(davinci_core::engine::EngineError::Replay { index, .. }) => assert_eq!(index, idx),
        other => panic!("expected a replay error, got {other:?}"),
    }
}
