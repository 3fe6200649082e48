//! Constraint reasoning over the opponent's hidden tiles.
//!
//! Three routes to the same question ("which labels can sit in this slot?"):
//!
//! * [`candidate_values`] — exact projection, computed by a forward/backward sweep
//!   over a small automaton that tracks the last numbered key, whether a joker is
//!   pending, and which jokers are used. Polynomial in the hand length.
//! * [`enumerate_assignments`] — brute-force enumeration of complete assignments,
//!   used as the oracle for small positions.
//! * [`local_candidates`] — cheap per-slot filtering by color, exclusions and the
//!   nearest revealed numbered neighbours. Always a superset of the exact projection.
//!
//! Joker placement: a joker's float is never observed, so a joker label fits any
//! gap between two numbered tiles whose values differ. It can never sit between
//! `Bn` and `Wn`, since joker values are never integers.

use serde::{Deserialize, Serialize};

use crate::engine::{Color, LabelSet, PlayerView, TileLabel};

pub const ORACLE_MAX_HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeductionError {
    #[error("assignment enumeration exceeded the cap of {cap}")]
    OracleOverflow { cap: usize },
    #[error("{hidden} hidden slots exceed the oracle limit of {ORACLE_MAX_HIDDEN}")]
    TooManyHidden { hidden: usize },
    #[error("slot {0} is already revealed")]
    SlotRevealed(usize),
    #[error("slot {0} does not exist")]
    NoSuchSlot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpponentSlot {
    pub color: Color,
    pub revealed: Option<TileLabel>,
    pub wrong_guesses: LabelSet,
}

/// Public constraints on the opponent's hand, as seen by one player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintView {
    /// Own hand plus the drawn card.
    pub own_labels: LabelSet,
    pub opponent: Vec<OpponentSlot>,
    pub deck_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub slot: usize,
    pub labels: LabelSet,
}

impl ConstraintView {
    pub fn from_view(view: &PlayerView) -> Self {
        let mut own_labels: LabelSet = view.hand.iter().map(|t| t.label()).collect();
        if let Some(t) = &view.drawn_card {
            own_labels.insert(t.label());
        }
        let opponent = view
            .opponent_hand_visible
            .iter()
            .zip(&view.opponent_wrong_guesses)
            .map(|(vis, wrong)| OpponentSlot { color: vis.color(), revealed: vis.label(), wrong_guesses: *wrong })
            .collect();
        Self { own_labels, opponent, deck_size: view.deck_size }
    }

    /// Labels whose location is public knowledge to this player.
    pub fn accounted(&self) -> LabelSet {
        self.opponent.iter().filter_map(|s| s.revealed).fold(self.own_labels, |mut acc, l| {
            acc.insert(l);
            acc
        })
    }

    pub fn hidden_slots(&self) -> Vec<usize> {
        self.opponent.iter().enumerate().filter(|(_, s)| s.revealed.is_none()).map(|(i, _)| i).collect()
    }

    /// Labels a hidden slot may take before any ordering reasoning.
    pub fn base_domain(&self, slot: usize) -> LabelSet {
        let s = &self.opponent[slot];
        LabelSet::of_color(s.color).difference(self.accounted()).difference(s.wrong_guesses)
    }

    fn check_hidden(&self, slot: usize) -> Result<(), DeductionError> {
        match self.opponent.get(slot) {
            None => Err(DeductionError::NoSuchSlot(slot)),
            Some(s) if s.revealed.is_some() => Err(DeductionError::SlotRevealed(slot)),
            Some(_) => Ok(()),
        }
    }
}

impl From<&PlayerView> for ConstraintView {
    fn from(view: &PlayerView) -> Self {
        Self::from_view(view)
    }
}

/// Sort key index of a numbered label: `2·value + color`.
fn number_key(label: TileLabel) -> Option<i8> {
    let color = match label.color() {
        Color::Black => 0,
        Color::White => 1,
    };
    label.value().map(|v| 2 * v as i8 + color)
}

fn joker_bit(label: TileLabel) -> u8 {
    match label.color() {
        Color::Black => 1,
        Color::White => 2,
    }
}

/// Automaton state while scanning a hand left to right.
#[derive(Clone, Copy)]
struct ScanState {
    last_key: i8,
    joker_pending: bool,
    jokers_used: u8,
}

const NUM_STATES: usize = 25 * 8;

impl ScanState {
    const START: ScanState = ScanState { last_key: -1, joker_pending: false, jokers_used: 0 };

    fn index(self) -> usize {
        (self.last_key + 1) as usize * 8 + usize::from(self.joker_pending) * 4 + self.jokers_used as usize
    }

    fn from_index(i: usize) -> Self {
        Self { last_key: (i / 8) as i8 - 1, joker_pending: (i / 4) % 2 == 1, jokers_used: (i % 4) as u8 }
    }

    fn advance(self, label: TileLabel) -> Option<ScanState> {
        match number_key(label) {
            Some(key) => {
                if self.last_key >= 0 {
                    if key <= self.last_key {
                        return None;
                    }
                    // a joker between two numbers needs a non-integer value strictly between them
                    if self.joker_pending && key / 2 <= self.last_key / 2 {
                        return None;
                    }
                }
                Some(ScanState { last_key: key, joker_pending: false, jokers_used: self.jokers_used })
            }
            None => {
                let bit = joker_bit(label);
                (self.jokers_used & bit == 0).then_some(ScanState {
                    last_key: self.last_key,
                    joker_pending: true,
                    jokers_used: self.jokers_used | bit,
                })
            }
        }
    }
}

fn slot_domains(view: &ConstraintView) -> Vec<LabelSet> {
    (0..view.opponent.len())
        .map(|i| match view.opponent[i].revealed {
            Some(label) => std::iter::once(label).collect(),
            None => view.base_domain(i),
        })
        .collect()
}

/// Exact per-slot projections for every slot (revealed slots project to their label).
pub fn exact_projections(view: &ConstraintView) -> Vec<LabelSet> {
    let domains = slot_domains(view);
    let n = domains.len();
    let mut forward = vec![[false; NUM_STATES]; n + 1];
    forward[0][ScanState::START.index()] = true;
    for i in 0..n {
        for s in 0..NUM_STATES {
            if !forward[i][s] {
                continue;
            }
            for label in domains[i].iter() {
                if let Some(next) = ScanState::from_index(s).advance(label) {
                    forward[i + 1][next.index()] = true;
                }
            }
        }
    }
    let mut backward = vec![[false; NUM_STATES]; n + 1];
    backward[n] = [true; NUM_STATES];
    let mut projections = vec![LabelSet::EMPTY; n];
    for i in (0..n).rev() {
        for s in 0..NUM_STATES {
            for label in domains[i].iter() {
                if let Some(next) = ScanState::from_index(s).advance(label) {
                    if backward[i + 1][next.index()] {
                        backward[i][s] = true;
                        if forward[i][s] {
                            projections[i].insert(label);
                        }
                    }
                }
            }
        }
    }
    projections
}

/// Labels consistent with every public constraint for a hidden slot.
pub fn candidate_values(view: &ConstraintView, slot: usize) -> Result<CandidateSet, DeductionError> {
    view.check_hidden(slot)?;
    Ok(CandidateSet { slot, labels: exact_projections(view)[slot] })
}

/// Per-slot filtering: color, exclusions, and the nearest revealed numbered neighbours.
pub fn local_candidates(view: &ConstraintView, slot: usize) -> Result<CandidateSet, DeductionError> {
    view.check_hidden(slot)?;
    let revealed_key = |s: &OpponentSlot| s.revealed.and_then(number_key);
    let lower = view.opponent[..slot].iter().rev().find_map(revealed_key);
    let upper = view.opponent[slot + 1..].iter().find_map(revealed_key);
    let labels = view
        .base_domain(slot)
        .iter()
        .filter(|l| match number_key(*l) {
            None => true,
            Some(k) => lower.is_none_or(|lo| k > lo) && upper.is_none_or(|hi| k < hi),
        })
        .collect();
    Ok(CandidateSet { slot, labels })
}

/// One label per hidden slot, in slot order.
pub type Assignment = Vec<TileLabel>;

/// Independent feasibility check for a left-to-right label sequence (possibly a prefix).
fn sequence_feasible(labels: &[TileLabel]) -> bool {
    let mut last: Option<(u8, Color)> = None;
    let mut jokers_between = false;
    let mut seen_jokers = LabelSet::EMPTY;
    for &label in labels {
        match label.value() {
            None => {
                if !seen_jokers.insert(label) {
                    return false;
                }
                jokers_between = true;
            }
            Some(v) => {
                let color = label.color();
                if let Some((lv, lc)) = last {
                    let increasing = v > lv || (v == lv && lc == Color::Black && color == Color::White);
                    if !increasing || (jokers_between && v <= lv) {
                        return false;
                    }
                }
                last = Some((v, color));
                jokers_between = false;
            }
        }
    }
    true
}

/// Enumerates every complete assignment of the hidden slots, up to `cap` of them.
pub fn enumerate_assignments(view: &ConstraintView, cap: usize) -> Result<Vec<Assignment>, DeductionError> {
    let hidden = view.hidden_slots();
    if hidden.len() > ORACLE_MAX_HIDDEN {
        return Err(DeductionError::TooManyHidden { hidden: hidden.len() });
    }
    let domains: Vec<Vec<TileLabel>> = hidden.iter().map(|&i| view.base_domain(i).iter().collect()).collect();
    let mut out = Vec::new();
    let mut current: Vec<Option<TileLabel>> = view.opponent.iter().map(|s| s.revealed).collect();
    fn walk(
        view: &ConstraintView,
        hidden: &[usize],
        domains: &[Vec<TileLabel>],
        depth: usize,
        current: &mut Vec<Option<TileLabel>>,
        out: &mut Vec<Assignment>,
        cap: usize,
    ) -> Result<(), DeductionError> {
        // the prefix up to (and including) every slot fixed so far must be feasible
        let fixed_upto = hidden.get(depth).copied().unwrap_or(view.opponent.len());
        let prefix: Vec<TileLabel> = current[..fixed_upto].iter().map(|l| l.expect("prefix is fixed")).collect();
        if !sequence_feasible(&prefix) {
            return Ok(());
        }
        if depth == hidden.len() {
            if out.len() == cap {
                return Err(DeductionError::OracleOverflow { cap });
            }
            out.push(hidden.iter().map(|&i| current[i].expect("assigned")).collect());
            return Ok(());
        }
        for &label in &domains[depth] {
            if hidden[..depth].iter().any(|&j| current[j] == Some(label)) {
                continue;
            }
            current[hidden[depth]] = Some(label);
            walk(view, hidden, domains, depth + 1, current, out, cap)?;
        }
        current[hidden[depth]] = None;
        Ok(())
    }
    walk(view, &hidden, &domains, 0, &mut current, &mut out, cap)?;
    Ok(out)
}

/// Projection of the enumerated assignments onto each hidden slot (oracle route).
pub fn oracle_projections(view: &ConstraintView, cap: usize) -> Result<Vec<(usize, LabelSet)>, DeductionError> {
    let hidden = view.hidden_slots();
    let assignments = enumerate_assignments(view, cap)?;
    let mut sets = vec![LabelSet::EMPTY; hidden.len()];
    for a in &assignments {
        for (set, label) in sets.iter_mut().zip(a) {
            set.insert(*label);
        }
    }
    Ok(hidden.into_iter().zip(sets).collect())
}

/// Hidden slots ordered by candidate count, ties to the leftmost slot.
pub fn rank_slots(view: &ConstraintView) -> Vec<(usize, CandidateSet)> {
    let projections = exact_projections(view);
    let mut ranked: Vec<(usize, CandidateSet)> = view
        .hidden_slots()
        .into_iter()
        .map(|slot| (slot, CandidateSet { slot, labels: projections[slot] }))
        .collect();
    ranked.sort_by_key(|(slot, c)| (c.labels.len(), *slot));
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> TileLabel {
        s.parse().unwrap()
    }

    fn set(labels: &[&str]) -> LabelSet {
        labels.iter().map(|s| l(s)).collect()
    }

    fn hidden(color: Color) -> OpponentSlot {
        OpponentSlot { color, revealed: None, wrong_guesses: LabelSet::EMPTY }
    }

    fn shown(label: &str) -> OpponentSlot {
        let label = l(label);
        OpponentSlot { color: label.color(), revealed: Some(label), wrong_guesses: LabelSet::EMPTY }
    }

    fn view(opponent: Vec<OpponentSlot>, own: &[&str]) -> ConstraintView {
        ConstraintView { own_labels: set(own), opponent, deck_size: 10 }
    }

    #[test]
    fn no_hidden_slots_yields_one_empty_assignment() {
        let v = view(vec![shown("B3"), shown("W7")], &[]);
        assert_eq!(enumerate_assignments(&v, 10).unwrap(), vec![Vec::<TileLabel>::new()]);
    }

    #[test]
    fn black_slot_between_b3_and_b7() {
        let v = view(vec![shown("B3"), hidden(Color::Black), shown("B7")], &[]);
        let all = enumerate_assignments(&v, 100).unwrap();
        let labels: LabelSet = all.iter().map(|a| a[0]).collect();
        assert_eq!(labels, set(&["B4", "B5", "B6", "B-"]));
        assert_eq!(candidate_values(&v, 1).unwrap().labels, labels);
    }

    #[test]
    fn interval_forcing_without_joker() {
        let v = view(vec![shown("B2"), hidden(Color::Black), shown("B4")], &["B-"]);
        assert_eq!(candidate_values(&v, 1).unwrap().labels, set(&["B3"]));
    }

    #[test]
    fn joker_cannot_split_equal_values() {
        let v = view(vec![shown("B5"), hidden(Color::Black), shown("W5")], &[]);
        assert!(enumerate_assignments(&v, 100).unwrap().is_empty());
        assert!(candidate_values(&v, 1).unwrap().labels.is_empty());
        // the local filter still admits the joker, which is why it is only a superset
        assert_eq!(local_candidates(&v, 1).unwrap().labels, set(&["B-"]));
    }

    #[test]
    fn unconstrained_white_slot_has_13_labels() {
        let v = view(vec![hidden(Color::White)], &[]);
        assert_eq!(candidate_values(&v, 0).unwrap().labels.len(), 13);
    }

    #[test]
    fn wrong_guess_is_subtracted() {
        let mut slot = hidden(Color::White);
        slot.wrong_guesses.insert(l("W5"));
        let v = view(vec![slot], &[]);
        let c = candidate_values(&v, 0).unwrap().labels;
        assert_eq!(c.len(), 12);
        assert!(!c.contains(l("W5")));
    }

    #[test]
    fn everything_excluded_gives_no_assignment() {
        let mut slot = hidden(Color::Black);
        slot.wrong_guesses = LabelSet::of_color(Color::Black);
        let v = view(vec![slot], &[]);
        assert!(enumerate_assignments(&v, 10).unwrap().is_empty());
    }

    #[test]
    fn cap_overflow_is_reported() {
        let v = view(vec![hidden(Color::Black), hidden(Color::White)], &[]);
        assert_eq!(enumerate_assignments(&v, 5), Err(DeductionError::OracleOverflow { cap: 5 }));
    }

    #[test]
    fn revealed_slot_is_a_usage_error() {
        let v = view(vec![shown("B3")], &[]);
        assert_eq!(candidate_values(&v, 0), Err(DeductionError::SlotRevealed(0)));
        assert_eq!(candidate_values(&v, 4), Err(DeductionError::NoSuchSlot(4)));
    }

    #[test]
    fn rank_orders_by_size_then_slot() {
        // slot 1 is pinned between B2 and B4 (joker owned), slots 0 and 3 are wider
        let v = view(
            vec![hidden(Color::Black), shown("B2"), hidden(Color::Black), shown("B4"), hidden(Color::White)],
            &["B-"],
        );
        let order: Vec<usize> = rank_slots(&v).into_iter().map(|(s, _)| s).collect();
        assert_eq!(order[0], 2);
        let v = view(vec![hidden(Color::Black), hidden(Color::Black)], &[]);
        // equal sizes keep the leftmost first
        let ranked = rank_slots(&v);
        assert_eq!(ranked[0].1.labels.len(), ranked[1].1.labels.len());
        assert_eq!(ranked.iter().map(|(s, _)| *s).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn two_hidden_slots_propagate_through_each_other() {
        // B? B? W0: both black slots sit below W0, so they hold B0 and the joker. The joker
        // cannot sit between B0 and W0, which forces the order [B-, B0].
        let v = view(vec![hidden(Color::Black), hidden(Color::Black), shown("W0")], &[]);
        let exact = exact_projections(&v);
        let oracle = oracle_projections(&v, 1000).unwrap();
        for (slot, labels) in oracle {
            assert_eq!(exact[slot], labels, "slot {slot}");
        }
        assert_eq!(exact[0], set(&["B-"]));
        assert_eq!(exact[1], set(&["B0"]));
    }
}
