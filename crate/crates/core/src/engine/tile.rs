//! Tiles, labels and the sort order that keeps every hand arranged.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub const ALL: [Color; 2] = [Color::Black, Color::White];

    pub fn letter(self) -> char {
        match self {
            Color::Black => 'B',
            Color::White => 'W',
        }
    }

    /// Rank used to break ties between equal values: Black sorts first.
    fn order(self) -> u8 {
        match self {
            Color::Black => 0,
            Color::White => 1,
        }
    }
}

/// Textual identity of a tile, without the hidden joker value.
///
/// Labels are numbered in action-space order: `B0..B11, B-, W0..W11, W-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileLabel(u8);

impl TileLabel {
    pub const COUNT: usize = 26;
    const PER_COLOR: u8 = 13;
    const JOKER_OFFSET: u8 = 12;

    pub fn number(color: Color, value: u8) -> Option<Self> {
        (value < Self::JOKER_OFFSET).then(|| Self(color.order() * Self::PER_COLOR + value))
    }

    pub fn joker(color: Color) -> Self {
        Self(color.order() * Self::PER_COLOR + Self::JOKER_OFFSET)
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < Self::COUNT).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn color(self) -> Color {
        if self.0 < Self::PER_COLOR {
            Color::Black
        } else {
            Color::White
        }
    }

    /// Numeric value, or `None` for the two jokers.
    pub fn value(self) -> Option<u8> {
        let v = self.0 % Self::PER_COLOR;
        (v < Self::JOKER_OFFSET).then_some(v)
    }

    pub fn is_joker(self) -> bool {
        self.value().is_none()
    }

    pub fn all() -> impl DoubleEndedIterator<Item = TileLabel> + ExactSizeIterator {
        (0..Self::COUNT as u8).map(TileLabel)
    }

    pub fn of_color(color: Color) -> impl Iterator<Item = TileLabel> {
        Self::all().filter(move |l| l.color() == color)
    }
}

impl fmt::Display for TileLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{}{}", self.color().letter(), v),
            None => write!(f, "{}-", self.color().letter()),
        }
    }
}

impl FromStr for TileLabel {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EngineError::BadLabel(s.to_string());
        let mut chars = s.chars();
        let color = match chars.next() {
            Some('B') => Color::Black,
            Some('W') => Color::White,
            _ => return Err(bad()),
        };
        let rest = chars.as_str();
        if rest == "-" {
            return Ok(TileLabel::joker(color));
        }
        // Reject "+3", "03" and friends so that Display/FromStr stay a bijection.
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || (rest.len() > 1 && rest.starts_with('0')) {
            return Err(bad());
        }
        let value: u8 = rest.parse().map_err(|_| bad())?;
        TileLabel::number(color, value).ok_or_else(bad)
    }
}

impl Serialize for TileLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TileLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Compact set of labels, one bit per label index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LabelSet(u32);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    pub const FULL: LabelSet = LabelSet((1 << TileLabel::COUNT) - 1);

    pub fn of_color(color: Color) -> Self {
        TileLabel::of_color(color).collect()
    }

    pub fn insert(&mut self, label: TileLabel) -> bool {
        let had = self.contains(label);
        self.0 |= 1 << label.0;
        !had
    }

    pub fn remove(&mut self, label: TileLabel) {
        self.0 &= !(1 << label.0);
    }

    pub fn contains(self, label: TileLabel) -> bool {
        self.0 & (1 << label.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn difference(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Members in label-index order.
    pub fn iter(self) -> impl Iterator<Item = TileLabel> {
        TileLabel::all().filter(move |l| self.contains(*l))
    }

    pub fn bits(self) -> u32 {
        self.0
    }
}

impl FromIterator<TileLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = TileLabel>>(iter: I) -> Self {
        let mut set = LabelSet::EMPTY;
        for label in iter {
            set.insert(label);
        }
        set
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<TileLabel>::deserialize(deserializer)?;
        Ok(labels.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rank {
    Number(u8),
    /// Jokers carry a per-game float that fixes their place in the order.
    Joker(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    color: Color,
    rank: Rank,
}

impl Tile {
    pub fn number(color: Color, value: u8) -> Result<Self, EngineError> {
        if value >= 12 {
            return Err(EngineError::BadTile(format!("number {value} out of range")));
        }
        Ok(Self { color, rank: Rank::Number(value) })
    }

    /// The value must lie in (-1, 12) and must not be an integer.
    pub fn joker(color: Color, value: f64) -> Result<Self, EngineError> {
        if !(value > -1.0 && value < 12.0) || value.fract() == 0.0 {
            return Err(EngineError::BadTile(format!("joker value {value} not admissible")));
        }
        Ok(Self { color, rank: Rank::Joker(value) })
    }

    pub fn color(&self) -> Color {
        self.color
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn joker_value(&self) -> Option<f64> {
        match self.rank {
            Rank::Joker(v) => Some(v),
            Rank::Number(_) => None,
        }
    }

    pub fn label(&self) -> TileLabel {
        match self.rank {
            Rank::Number(v) => TileLabel::number(self.color, v).expect("validated at construction"),
            Rank::Joker(_) => TileLabel::joker(self.color),
        }
    }

    pub fn sort_key(&self) -> SortKey {
        card_sort_key(self)
    }
}

impl fmt::Display for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.label().fmt(f)
    }
}

#[derive(Serialize, Deserialize)]
struct TileRepr {
    label: TileLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joker_value: Option<f64>,
}

impl Serialize for Tile {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TileRepr { label: self.label(), joker_value: self.joker_value() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tile {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TileRepr::deserialize(deserializer)?;
        let color = repr.label.color();
        let tile = match (repr.label.value(), repr.joker_value) {
            (Some(v), None) => Tile::number(color, v),
            (None, Some(jv)) => Tile::joker(color, jv),
            _ => Err(EngineError::BadTile(format!("{} with joker_value {:?}", repr.label, repr.joker_value))),
        };
        tile.map_err(serde::de::Error::custom)
    }
}

/// Total order over tiles: effective value first, Black before White on ties.
#[derive(Debug, Clone, Copy)]
pub struct SortKey {
    pub value: f64,
    pub color: Color,
}

impl PartialEq for SortKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SortKey {}

impl PartialOrd for SortKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SortKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value.total_cmp(&other.value).then(self.color.order().cmp(&other.color.order()))
    }
}

pub fn card_sort_key(tile: &Tile) -> SortKey {
    let value = match tile.rank {
        Rank::Number(v) => f64::from(v),
        Rank::Joker(v) => v,
    };
    SortKey { value, color: tile.color }
}
