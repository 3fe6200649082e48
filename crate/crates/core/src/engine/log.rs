//! Line-delimited game logs: one header record, then one record per history event.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::state::{replay, GameState, HistoryEvent};
use super::EngineError;

pub const LOG_FORMAT: &str = "davinci-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub hand_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameLog {
    pub seed: u64,
    pub hand_size: usize,
    pub events: Vec<HistoryEvent>,
}

impl GameLog {
    pub fn from_state(state: &GameState) -> Self {
        Self { seed: state.seed(), hand_size: state.hand_size(), events: state.history().to_vec() }
    }

    pub fn header(&self) -> LogHeader {
        LogHeader { format: LOG_FORMAT.to_string(), version: LOG_VERSION, seed: self.seed, hand_size: self.hand_size }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EngineError> {
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        for event in &self.events {
            serde_json::to_writer(&mut w, event)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, EngineError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let header_line = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(EngineError::Log { line: 1, reason: "missing header".into() }),
        };
        let header: LogHeader = serde_json::from_str(&header_line)
            .map_err(|e| EngineError::Log { line: 1, reason: e.to_string() })?;
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(EngineError::Log {
                line: 1,
                reason: format!("unsupported log {} v{}", header.format, header.version),
            });
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let event = serde_json::from_str(&line).map_err(|e| EngineError::Log { line: i + 1, reason: e.to_string() })?;
            events.push(event);
        }
        Ok(Self { seed: header.seed, hand_size: header.hand_size, events })
    }

    pub fn parse(text: &str) -> Result<Self, EngineError> {
        Self::read_from(text.as_bytes())
    }

    pub fn replay(&self) -> Result<GameState, EngineError> {
        replay(self.seed, self.hand_size, &self.events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Action, TileLabel};

    #[test]
    fn records_are_field_ordered() {
        let mut g = GameState::new(1, 4).unwrap();
        g.step(Action::Guess { position: 0, label: "W-".parse::<TileLabel>().unwrap() }).unwrap();
        let text = GameLog::from_state(&g).to_text();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), r#"{"format":"davinci-log","version":1,"seed":1,"hand_size":4}"#);
        assert!(lines.next().unwrap().starts_with(r#"{"actor":0,"kind":"draw","color":"#));
        assert!(lines.next().unwrap().starts_with(r#"{"actor":0,"kind":"guess","position":0,"label":"W-","correct":"#));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = "{\"format\":\"davinci-log\",\"version\":9,\"seed\":1,\"hand_size\":4}\n";
        assert!(matches!(GameLog::parse(text), Err(EngineError::Log { line: 1, .. })));
    }

    #[test]
    fn bad_event_line_is_located() {
        let text = "{\"format\":\"davinci-log\",\"version\":1,\"seed\":1,\"hand_size\":4}\n{\"actor\":0,\"kind\":\"teleport\"}\n";
        assert!(matches!(GameLog::parse(text), Err(EngineError::Log { line: 2, .. })));
    }
}
