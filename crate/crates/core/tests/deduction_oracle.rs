use davinci_core::audit::sample_position;
use davinci_core::deduction::{
    candidate_values, enumerate_assignments, exact_projections, local_candidates, oracle_projections,
    ConstraintView, OpponentSlot, ORACLE_MAX_HIDDEN,
};
use davinci_core::engine::{Color, LabelSet, TileLabel};
use proptest::prelude::*;

const CAP: usize = 5_000_000;

fn l(s: &str) -> TileLabel {
    s.parse().unwrap()
}

#[test]
fn exact_projection_matches_brute_force_and_contains_truth() {
    let mut checked = 0;
    for seed in 0..1500u64 {
        let pos = sample_position(seed);
        if pos.hidden_count() > ORACLE_MAX_HIDDEN {
            continue;
        }
        let cv = ConstraintView::from_view(&pos.view);
        let oracle = oracle_projections(&cv, CAP).unwrap();
        for (slot, projected) in oracle {
            let exact = candidate_values(&cv, slot).unwrap().labels;
            let local = local_candidates(&cv, slot).unwrap().labels;
            assert_eq!(exact, projected, "seed {seed} slot {slot}");
            assert!(projected.is_subset(local), "seed {seed} slot {slot}");
            assert!(exact.contains(pos.truth[slot]), "seed {seed} slot {slot}");
            if exact.len() == 1 {
                assert_eq!(exact.iter().next(), Some(pos.truth[slot]));
            }
        }
        checked += 1;
    }
    assert!(checked >= 1000, "only {checked} positions had few enough hidden slots");
}

#[test]
fn soundness_on_larger_positions() {
    for seed in 10_000..12_000u64 {
        let pos = sample_position(seed);
        let cv = ConstraintView::from_view(&pos.view);
        let proj = exact_projections(&cv);
        for slot in cv.hidden_slots() {
            assert!(proj[slot].contains(pos.truth[slot]), "seed {seed} slot {slot}");
        }
    }
}

fn hidden(color: Color) -> OpponentSlot {
    OpponentSlot { color, revealed: None, wrong_guesses: LabelSet::EMPTY }
}

fn shown(label: &str) -> OpponentSlot {
    let label = l(label);
    OpponentSlot { color: label.color(), revealed: Some(label), wrong_guesses: LabelSet::EMPTY }
}

#[test]
fn local_filter_is_exact_when_neighbours_decide() {
    // Curated positions where one hidden slot sits between revealed numbers and no joker
    // or other hidden slot interacts: the local filter already is the projection.
    let cases = [
        vec![shown("B2"), hidden(Color::Black), shown("W6")],
        vec![shown("W0"), hidden(Color::White), shown("B11")],
        vec![hidden(Color::Black), shown("W1")],
        vec![shown("B9"), hidden(Color::White)],
    ];
    for opponent in cases {
        let own: LabelSet = [l("B-"), l("W-")].into_iter().collect();
        let cv = ConstraintView { own_labels: own, opponent, deck_size: 5 };
        for slot in cv.hidden_slots() {
            assert_eq!(
                local_candidates(&cv, slot).unwrap().labels,
                candidate_values(&cv, slot).unwrap().labels,
                "{cv:?}"
            );
        }
    }
}

#[test]
fn enumeration_overflow_is_reported() {
    let cv = ConstraintView {
        own_labels: LabelSet::EMPTY,
        opponent: vec![hidden(Color::Black), hidden(Color::White), hidden(Color::Black)],
        deck_size: 10,
    };
    assert!(enumerate_assignments(&cv, 3).is_err());
}

proptest! {
    #[test]
    fn constraints_only_shrink_candidate_sets(seed in 0u64..5000, pick in any::<prop::sample::Index>(), reveal in any::<bool>()) {
        let pos = sample_position(seed);
        let cv = ConstraintView::from_view(&pos.view);
        let hidden = cv.hidden_slots();
        prop_assume!(!hidden.is_empty());
        let slot = *pick.get(&hidden);
        let before = exact_projections(&cv);
        let mut tighter = cv.clone();
        if reveal {
            tighter.opponent[slot].revealed = Some(pos.truth[slot]);
        } else {
            let wrong: Vec<TileLabel> = before[slot].iter().filter(|x| *x != pos.truth[slot]).collect();
            prop_assume!(!wrong.is_empty());
            tighter.opponent[slot].wrong_guesses.insert(*pick.get(&wrong));
        }
        let after = exact_projections(&tighter);
        for s in tighter.hidden_slots() {
            prop_assert!(after[s].is_subset(before[s]), "slot {} grew", s);
            prop_assert!(after[s].contains(pos.truth[s]));
        }
    }
}
