//! Token serialization of a player's view and the flat 339-way action space.
//!
//! A view serializes to a header (hands, drawn tile, flags) followed by one token
//! group per history event, always from the acting player's perspective: the viewer
//! is `Player0:`. Tokens come from a closed 64-entry vocabulary shipped as
//! `assets/vocab.json`; tokenization is exact lookup.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::engine::{Action, EventKind, HistoryEvent, PlayerView, TileLabel, VisibleTile};

pub const VOCAB_SIZE: usize = 64;
pub const VOCAB_VERSION: u32 = 1;
pub const PAD_ID: u16 = 53;
pub const CLS_ID: u16 = 57;
pub const MAX_HISTORY_LEN: usize = 256;

pub const NUM_POSITIONS: usize = 13;
pub const NUM_CARD_VALUES: usize = TileLabel::COUNT;
pub const NUM_ACTIONS: usize = NUM_POSITIONS * NUM_CARD_VALUES + 1;
pub const PLACE_INDEX: usize = NUM_ACTIONS - 1;

const MANIFEST: &str = include_str!("../assets/vocab.json");

const CLS: &str = "[CLS]";
const NEWLINE: &str = "\n";
const MAX_POS_TOKEN: usize = 13;

#[derive(Debug, thiserror::Error)]
pub enum EncodingError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("vocabulary manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("action index {0} is out of range 0..{NUM_ACTIONS}")]
    IndexOutOfRange(usize),
    #[error("guess position {0} is outside the action space")]
    PositionOutOfRange(usize),
    #[error("header of {0} tokens does not fit in {MAX_HISTORY_LEN}")]
    HeaderTooLong(usize),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
struct Manifest {
    format: String,
    version: u32,
    pad_id: u16,
    cls_id: u16,
    tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u16>,
    version: u32,
}

impl Vocab {
    /// The vocabulary compiled into this build.
    pub fn builtin() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(|| Vocab::parse_unchecked(MANIFEST).expect("bundled manifest is valid"))
    }

    fn parse_unchecked(text: &str) -> Result<Vocab, EncodingError> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.format != "davinci-vocab" {
            return Err(EncodingError::ManifestMismatch(format!("unknown format {:?}", m.format)));
        }
        if m.tokens.len() != VOCAB_SIZE {
            return Err(EncodingError::ManifestMismatch(format!("{} tokens, expected {VOCAB_SIZE}", m.tokens.len())));
        }
        if m.tokens.get(m.pad_id as usize).map(String::as_str) != Some("[PAD]") || m.pad_id != PAD_ID {
            return Err(EncodingError::ManifestMismatch(format!("pad id {}", m.pad_id)));
        }
        if m.tokens.get(m.cls_id as usize).map(String::as_str) != Some(CLS) || m.cls_id != CLS_ID {
            return Err(EncodingError::ManifestMismatch(format!("cls id {}", m.cls_id)));
        }
        let ids: HashMap<String, u16> = m.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u16)).collect();
        if ids.len() != VOCAB_SIZE {
            return Err(EncodingError::ManifestMismatch("duplicate tokens".into()));
        }
        Ok(Vocab { tokens: m.tokens, ids, version: m.version })
    }

    /// Loads an external manifest, refusing anything that differs from the built-in table.
    pub fn from_manifest(text: &str) -> Result<Vocab, EncodingError> {
        let vocab = Self::parse_unchecked(text)?;
        if vocab.version != VOCAB_VERSION {
            return Err(EncodingError::ManifestMismatch(format!(
                "manifest version {} but encoder expects {VOCAB_VERSION}",
                vocab.version
            )));
        }
        if vocab.tokens != Self::builtin().tokens {
            return Err(EncodingError::ManifestMismatch("token table differs from the built-in table".into()));
        }
        Ok(vocab)
    }

    pub fn manifest_text() -> &'static str {
        MANIFEST
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn id(&self, token: &str) -> Result<u16, EncodingError> {
        self.ids.get(token).copied().ok_or_else(|| EncodingError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u16) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Serialized view: a fixed header plus one token group per history event, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub header: Vec<String>,
    pub events: Vec<Vec<String>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.header.len() + self.events.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.header.iter().chain(self.events.iter().flatten()).map(String::as_str)
    }
}

impl fmt::Display for TokenSequence {
    /// Space-separated tokens; the newline token is printed as a line break.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for tok in self.tokens() {
            if tok == NEWLINE {
                f.write_str(NEWLINE)?;
                first = true;
                continue;
            }
            if !first {
                f.write_str(" ")?;
            }
            f.write_str(tok)?;
            first = false;
        }
        Ok(())
    }
}

fn label_token(label: TileLabel) -> String {
    label.to_string()
}

fn bracketed(out: &mut Vec<String>, label: TileLabel) {
    out.push("[".into());
    out.push(label_token(label));
    out.push("]".into());
}

fn player_tag(actor: usize, viewer: usize) -> String {
    if actor == viewer { "Player0:" } else { "Player1:" }.into()
}

fn pos_token(position: usize) -> Result<String, EncodingError> {
    if position > MAX_POS_TOKEN {
        return Err(EncodingError::UnknownToken(format!("pos{position}")));
    }
    Ok(format!("pos{position}"))
}

/// Tokens for one history event as seen by `viewer`.
pub fn event_tokens(event: &HistoryEvent, viewer: usize) -> Result<Vec<String>, EncodingError> {
    let mut out = vec![player_tag(event.actor, viewer)];
    match event.kind {
        EventKind::Draw { color } => {
            out.push("Draw".into());
            out.push(format!("{}?", color.letter()));
        }
        EventKind::Guess { position, label, correct } => {
            out.push("Guess".into());
            out.push(pos_token(position)?);
            out.push(label_token(label));
            out.push(if correct { "Correct" } else { "Wrong" }.into());
        }
        EventKind::Place { revealed } => {
            out.push("Place".into());
            out.push(if revealed { "Revealed" } else { "Hidden" }.into());
        }
        EventKind::Forfeit => out.push("Forfeit".into()),
    }
    Ok(out)
}

/// Serializes a view and its history from the viewer's perspective.
pub fn serialize_view(view: &PlayerView, history: &[HistoryEvent]) -> Result<TokenSequence, EncodingError> {
    let mut header: Vec<String> = vec![CLS.into(), "Current-hand:".into()];
    for (tile, revealed) in view.hand.iter().zip(&view.revealed_self) {
        if *revealed {
            bracketed(&mut header, tile.label());
        } else {
            header.push(label_token(tile.label()));
        }
    }
    header.push(NEWLINE.into());
    header.push("Opponent-hand:".into());
    for slot in &view.opponent_hand_visible {
        match *slot {
            VisibleTile::Hidden { color } => header.push(format!("{}?", color.letter())),
            VisibleTile::Revealed { label } => bracketed(&mut header, label),
        }
    }
    header.push(NEWLINE.into());
    header.push("Drawn:".into());
    header.push(match &view.drawn_card {
        Some(t) => label_token(t.label()),
        None => "None".into(),
    });
    if view.can_guess_again {
        header.push("Guess-again".into());
    }
    if view.deck_size == 0 {
        header.push("Deck-empty".into());
    }
    header.push(NEWLINE.into());
    header.push("History:".into());
    let events = history.iter().map(|e| event_tokens(e, view.player)).collect::<Result<_, _>>()?;
    Ok(TokenSequence { header, events })
}

/// Fixed-length model input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedState {
    /// Always `MAX_HISTORY_LEN` ids; PAD ids form a contiguous suffix.
    pub token_ids: Vec<u16>,
    /// `true` where the id is PAD.
    pub padding_mask: Vec<bool>,
}

impl EncodedState {
    /// Number of non-PAD tokens.
    pub fn content_len(&self) -> usize {
        self.padding_mask.iter().position(|&p| p).unwrap_or(self.padding_mask.len())
    }

    pub fn content(&self) -> &[u16] {
        &self.token_ids[..self.content_len()]
    }

    /// Rebuilds a padded state from its non-PAD prefix.
    pub fn from_content(content: &[u16]) -> Self {
        let mut token_ids = content.to_vec();
        token_ids.resize(MAX_HISTORY_LEN, PAD_ID);
        let padding_mask = (0..MAX_HISTORY_LEN).map(|i| i >= content.len()).collect();
        Self { token_ids, padding_mask }
    }
}

/// Maps tokens to ids, dropping the oldest events if needed, and pads to 256.
pub fn tokenize_pad(seq: &TokenSequence, vocab: &Vocab) -> Result<EncodedState, EncodingError> {
    let header: Vec<u16> = seq.header.iter().map(|t| vocab.id(t)).collect::<Result<_, _>>()?;
    if header.len() > MAX_HISTORY_LEN {
        return Err(EncodingError::HeaderTooLong(header.len()));
    }
    let events: Vec<Vec<u16>> =
        seq.events.iter().map(|e| e.iter().map(|t| vocab.id(t)).collect::<Result<_, _>>()).collect::<Result<_, _>>()?;
    let mut budget = MAX_HISTORY_LEN - header.len();
    let mut keep_from = events.len();
    while keep_from > 0 && events[keep_from - 1].len() <= budget {
        budget -= events[keep_from - 1].len();
        keep_from -= 1;
    }
    let mut content = header;
    for e in &events[keep_from..] {
        content.extend_from_slice(e);
    }
    Ok(EncodedState::from_content(&content))
}

/// Serializes and tokenizes in one go with the built-in vocabulary.
pub fn encode_view(view: &PlayerView, history: &[HistoryEvent]) -> Result<EncodedState, EncodingError> {
    tokenize_pad(&serialize_view(view, history)?, Vocab::builtin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionIndex(u16);

impl ActionIndex {
    pub fn new(index: usize) -> Result<Self, EncodingError> {
        if index < NUM_ACTIONS {
            Ok(Self(index as u16))
        } else {
            Err(EncodingError::IndexOutOfRange(index))
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

pub fn action_to_index(action: Action) -> Result<ActionIndex, EncodingError> {
    match action {
        Action::Place => Ok(ActionIndex(PLACE_INDEX as u16)),
        Action::Guess { position, label } => {
            if position >= NUM_POSITIONS {
                return Err(EncodingError::PositionOutOfRange(position));
            }
            Ok(ActionIndex((position * NUM_CARD_VALUES + label.index()) as u16))
        }
    }
}

pub fn index_to_action(index: usize) -> Result<Action, EncodingError> {
    if index >= NUM_ACTIONS {
        return Err(EncodingError::IndexOutOfRange(index));
    }
    if index == PLACE_INDEX {
        return Ok(Action::Place);
    }
    let label = TileLabel::from_index(index % NUM_CARD_VALUES).expect("remainder is below 26");
    Ok(Action::Guess { position: index / NUM_CARD_VALUES, label })
}

/// Legality over the flat action space, one bit per index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionMask([u64; 6]);

impl ActionMask {
    pub fn set(&mut self, index: usize) {
        self.0[index / 64] |= 1 << (index % 64);
    }

    pub fn get(&self, index: usize) -> bool {
        index < NUM_ACTIONS && self.0[index / 64] & (1 << (index % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_ACTIONS).filter(|&i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..NUM_ACTIONS).map(|i| self.get(i)).collect()
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut mask = Self::default();
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b).take_while(|(i, _)| *i < NUM_ACTIONS) {
            mask.set(i);
        }
        mask
    }
}

/// Mask over the flat action space. Actions outside the space are reported, not dropped.
pub fn legal_mask(legal_actions: &[Action]) -> Result<ActionMask, EncodingError> {
    let mut mask = ActionMask::default();
    for a in legal_actions {
        mask.set(action_to_index(*a)?.get());
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Color, GameState};

    #[test]
    fn vocabulary_has_fixed_ids() {
        let v = Vocab::builtin();
        assert_eq!(v.len(), 64);
        assert_eq!(v.id("[PAD]").unwrap(), 53);
        assert_eq!(v.id("[CLS]").unwrap(), CLS_ID);
        assert_eq!(v.id("B0").unwrap(), 0);
        assert_eq!(v.id("W-").unwrap(), 25);
        for i in 0..64u16 {
            assert_eq!(v.id(v.token(i).unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn manifest_version_mismatch_is_refused() {
        let text = Vocab::manifest_text().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Vocab::from_manifest(&text), Err(EncodingError::ManifestMismatch(_))));
        let text = Vocab::manifest_text().replace("\"Deck-empty\"", "\"Deck-low\"");
        assert!(matches!(Vocab::from_manifest(&text), Err(EncodingError::ManifestMismatch(_))));
        assert!(Vocab::from_manifest(Vocab::manifest_text()).is_ok());
    }

    #[test]
    fn action_index_examples() {
        assert_eq!(action_to_index(Action::Place).unwrap().get(), 338);
        let b0: TileLabel = "B0".parse().unwrap();
        assert_eq!(action_to_index(Action::Guess { position: 0, label: b0 }).unwrap().get(), 0);
        let b5: TileLabel = "B5".parse().unwrap();
        assert_eq!(action_to_index(Action::Guess { position: 2, label: b5 }).unwrap().get(), 57);
        assert_eq!(index_to_action(57).unwrap(), Action::Guess { position: 2, label: b5 });
        assert!(matches!(index_to_action(339), Err(EncodingError::IndexOutOfRange(339))));
        assert!(action_to_index(Action::Guess { position: 13, label: b0 }).is_err());
    }

    #[test]
    fn place_only_mask() {
        let mask = legal_mask(&[Action::Place]).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get(338));
    }

    #[test]
    fn fresh_deal_token_count() {
        let g = GameState::new(42, 4).unwrap();
        let seq = serialize_view(&g.view(0), &[]).unwrap();
        // CLS, headers, three newlines, drawn label, plus one token per tile on each side
        let fixed = 1 + 1 + 1 + 1 + 1 + 1 + 1 + 1;
        assert_eq!(seq.len(), fixed + 2 * 4 + 1);
        assert!(seq.events.is_empty());
    }

    #[test]
    fn correct_guess_tokens() {
        let event = HistoryEvent {
            actor: 1,
            kind: EventKind::Guess { position: 2, label: "B5".parse().unwrap(), correct: true },
        };
        assert_eq!(event_tokens(&event, 1).unwrap(), ["Player0:", "Guess", "pos2", "B5", "Correct"]);
        assert_eq!(event_tokens(&event, 0).unwrap()[0], "Player1:");
        let draw = HistoryEvent { actor: 0, kind: EventKind::Draw { color: Color::White } };
        assert_eq!(event_tokens(&draw, 0).unwrap(), ["Player0:", "Draw", "W?"]);
    }

    #[test]
    fn unencodable_position_is_an_error() {
        let event = HistoryEvent {
            actor: 0,
            kind: EventKind::Guess { position: 14, label: "B5".parse().unwrap(), correct: false },
        };
        assert!(matches!(event_tokens(&event, 0), Err(EncodingError::UnknownToken(t)) if t == "pos14"));
    }

    #[test]
    fn revealed_opponent_tile_is_bracketed() {
        let mut g = GameState::new(8, 4).unwrap();
        let slot = g.hand(1)[1].clone();
        g.step(Action::Guess { position: 1, label: slot.tile.label() }).unwrap();
        let text = serialize_view(&g.view(0), g.history()).unwrap().to_string();
        let opp_line = text.lines().nth(1).unwrap();
        assert!(opp_line.contains(&format!("[ {} ]", slot.tile.label())), "{opp_line}");
        assert!(opp_line.starts_with("Opponent-hand: "));
    }

    #[test]
    fn short_sequences_pad_with_pad_id() {
        let seq = TokenSequence { header: vec!["[CLS]".into(); 10], events: vec![] };
        let enc = tokenize_pad(&seq, Vocab::builtin()).unwrap();
        assert_eq!(enc.token_ids.len(), 256);
        assert_eq!(enc.content_len(), 10);
        assert!(enc.token_ids[10..].iter().all(|&t| t == PAD_ID));
        assert_eq!(enc.padding_mask.iter().filter(|&&p| p).count(), 246);
    }

    #[test]
    fn truncation_drops_oldest_events() {
        let header: Vec<String> = ["[CLS]", "Current-hand:", "B1", "\n", "History:"].map(String::from).to_vec();
        let events: Vec<Vec<String>> = (0..100)
            .map(|i| vec!["Player0:".into(), "Guess".into(), format!("pos{}", i % 13), "B5".into(), "Wrong".into()])
            .collect();
        let seq = TokenSequence { header: header.clone(), events: events.clone() };
        assert!(seq.len() > 256);
        let enc = tokenize_pad(&seq, Vocab::builtin()).unwrap();
        assert_eq!(enc.token_ids.len(), 256);
        assert_eq!(enc.token_ids[0], CLS_ID);
        let v = Vocab::builtin();
        let kept = (256 - header.len()) / 5;
        assert_eq!(enc.content_len(), header.len() + kept * 5);
        // the newest event is the last content group
        let last_pos = format!("pos{}", 99 % 13);
        assert_eq!(v.token(enc.token_ids[enc.content_len() - 3]).unwrap(), last_pos);
        let first_kept = &events[100 - kept];
        assert_eq!(v.token(enc.token_ids[header.len() + 2]).unwrap(), first_kept[2]);
    }

    #[test]
    fn unknown_token_is_a_hard_error() {
        let seq = TokenSequence { header: vec!["[CLS]".into(), "Bogus".into()], events: vec![] };
        assert!(matches!(tokenize_pad(&seq, Vocab::builtin()), Err(EncodingError::UnknownToken(t)) if t == "Bogus"));
    }
}
