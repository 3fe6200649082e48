//! Head-to-head matches, win-rate confidence intervals and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentDecision, AgentError, AgentFactory};
use crate::engine::{EngineError, GameLog, GameState, HistoryEvent, PlayerId, PlayerView, DEFAULT_HAND_SIZE};

pub const DEFAULT_MAX_STEPS: usize = 5000;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("a match needs at least one game")]
    NoGames,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// Derives an independent 64-bit seed for `stream` from `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 95% normal-approximation half-width in percent, rounded half-up to one decimal.
pub fn ci_halfwidth(n: u64, wins: u64) -> f64 {
    assert!(n >= 1, "ci_halfwidth needs n >= 1");
    let p = wins as f64 / n as f64;
    let raw = 100.0 * 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    // The epsilon keeps exact .x5 values from rounding down through representation error.
    ((raw * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

/// True when the 95% interval around `wins / n` does not contain one half.
pub fn ci_excludes_half(n: u64, wins: u64) -> bool {
    let p = 100.0 * wins as f64 / n as f64;
    (p - 50.0).abs() > ci_halfwidth(n, wins)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forfeit {
    pub seat: PlayerId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub winner: Option<PlayerId>,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forfeit: Option<Forfeit>,
}

/// Plays one game between two seated agents. Agent errors forfeit the game for that
/// seat; games still running after `max_steps` decisions end without a winner.
pub fn play_game(
    state: &mut GameState,
    agents: [&mut dyn Agent; 2],
    max_steps: usize,
) -> Result<GameOutcome, EngineError> {
    let mut steps = 0;
    let mut forfeit = None;
    while !state.is_over() && steps < max_steps {
        let seat = state.current_player();
        let view = state.view(seat);
        match agents[seat].decide(&view, state.history()) {
            Ok(decision) => {
                if !state.is_legal(decision.action) {
                    forfeit = Some(Forfeit { seat, reason: format!("illegal action {:?}", decision.action) });
                }
                state.apply(decision.action)?;
            }
            Err(e) => {
                forfeit = Some(Forfeit { seat, reason: e.to_string() });
                state.forfeit();
            }
        }
        steps += 1;
    }
    Ok(GameOutcome { winner: state.winner(), steps, forfeit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game: u64,
    pub seed: u64,
    /// Seat occupied by agent A.
    pub a_seat: PlayerId,
    pub a_won: bool,
    #[serde(flatten)]
    pub outcome: GameOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatBalance {
    pub a_first_games: u64,
    pub a_first_wins: u64,
    pub a_second_games: u64,
    pub a_second_wins: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub agent_a: String,
    pub agent_b: String,
    pub games: u64,
    pub wins: u64,
    pub win_rate: f64,
    pub ci_halfwidth: f64,
    pub seat_balance: SeatBalance,
    pub forfeits_a: u64,
    pub forfeits_b: u64,
    pub unfinished: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
    pub records: Vec<GameRecord>,
}

impl MatchReport {
    pub fn from_records(agent_a: String, agent_b: String, records: Vec<GameRecord>, log_dir: Option<PathBuf>) -> Self {
        let games = records.len() as u64;
        let wins = records.iter().filter(|r| r.a_won).count() as u64;
        let mut seat_balance = SeatBalance::default();
        let (mut forfeits_a, mut forfeits_b, mut unfinished) = (0, 0, 0);
        for r in &records {
            if r.a_seat == 0 {
                seat_balance.a_first_games += 1;
                seat_balance.a_first_wins += r.a_won as u64;
            } else {
                seat_balance.a_second_games += 1;
                seat_balance.a_second_wins += r.a_won as u64;
            }
            match &r.outcome.forfeit {
                Some(f) if f.seat == r.a_seat => forfeits_a += 1,
                Some(_) => forfeits_b += 1,
                None => {}
            }
            unfinished += r.outcome.winner.is_none() as u64;
        }
        Self {
            agent_a,
            agent_b,
            games,
            wins,
            win_rate: if games == 0 { 0.0 } else { wins as f64 / games as f64 },
            ci_halfwidth: if games == 0 { 0.0 } else { ci_halfwidth(games, wins) },
            seat_balance,
            forfeits_a,
            forfeits_b,
            unfinished,
            log_dir,
            records,
        }
    }

    pub fn ci_excludes_half(&self) -> bool {
        self.games > 0 && ci_excludes_half(self.games, self.wins)
    }
}

#[derive(Debug, Clone)]
pub struct MatchOptions {
    pub hand_size: usize,
    pub max_steps: usize,
    /// Directory receiving one game log per game.
    pub log_dir: Option<PathBuf>,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { hand_size: DEFAULT_HAND_SIZE, max_steps: DEFAULT_MAX_STEPS, log_dir: None }
    }
}

pub fn game_log_path(dir: &Path, game: u64) -> PathBuf {
    dir.join(format!("game_{game:06}.ndjson"))
}

/// Stands in for an agent whose construction failed; it forfeits on its first move.
struct Broken(String);

impl Agent for Broken {
    fn name(&self) -> &str {
        "broken"
    }

    fn decide(&mut self, _: &PlayerView, _: &[HistoryEvent]) -> Result<AgentDecision, AgentError> {
        Err(AgentError::Failed(format!("agent construction failed: {}", self.0)))
    }
}

/// Plays `games` games of A against B. Agent A sits first in even-numbered games.
pub fn run_match(
    a: &dyn AgentFactory,
    b: &dyn AgentFactory,
    games: u64,
    seed: u64,
) -> Result<MatchReport, EvalError> {
    run_match_with(a, b, games, seed, &MatchOptions::default())
}

pub fn run_match_with(
    a: &dyn AgentFactory,
    b: &dyn AgentFactory,
    games: u64,
    seed: u64,
    options: &MatchOptions,
) -> Result<MatchReport, EvalError> {
    if games == 0 {
        return Err(EvalError::NoGames);
    }
    if let Some(dir) = &options.log_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let records = (0..games)
        .into_par_iter()
        .map(|game| play_match_game(a, b, game, seed, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MatchReport::from_records(a.name(), b.name(), records, options.log_dir.clone()))
}

fn play_match_game(
    a: &dyn AgentFactory,
    b: &dyn AgentFactory,
    game: u64,
    seed: u64,
    options: &MatchOptions,
) -> Result<GameRecord, EvalError> {
    let game_seed = derive_seed(seed, game);
    let a_seat = (game % 2) as PlayerId;
    let mut state = GameState::new(game_seed, options.hand_size)?;
    let mut agent_a = a.build(derive_seed(game_seed, 1)).unwrap_or_else(|e| Box::new(Broken(e.to_string())));
    let mut agent_b = b.build(derive_seed(game_seed, 2)).unwrap_or_else(|e| Box::new(Broken(e.to_string())));
    let seats: [&mut dyn Agent; 2] =
        if a_seat == 0 { [agent_a.as_mut(), agent_b.as_mut()] } else { [agent_b.as_mut(), agent_a.as_mut()] };
    let outcome = play_game(&mut state, seats, options.max_steps)?;
    if let Some(dir) = &options.log_dir {
        let path = game_log_path(dir, game);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        GameLog::from_state(&state).write_to(std::io::BufWriter::new(file))?;
    }
    Ok(GameRecord { game, seed: game_seed, a_seat, a_won: outcome.winner == Some(a_seat), outcome })
}

/// Table 1 shaped text table, one row per report.
pub fn render_table(reports: &[MatchReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:<24} {:>7} {:>7}  Win Rate ± 95% CI (%)", "Agent", "Opponent", "Games", "Wins");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:<24} {:>7} {:>7}  {:.1} ± {:.1}",
            r.agent_a,
            r.agent_b,
            r.games,
            r.wins,
            100.0 * r.win_rate,
            r.ci_halfwidth
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub results: PathBuf,
    pub plot_data: PathBuf,
}

/// Writes `table.txt`, `results.json` and the win-rate plot data `winrates.csv` into `dir`.
pub fn emit_report(reports: &[MatchReport], dir: &Path) -> Result<ReportFiles, EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = ReportFiles {
        table: dir.join("table.txt"),
        results: dir.join("results.json"),
        plot_data: dir.join("winrates.csv"),
    };
    fs::write(&files.table, render_table(reports)).map_err(io_err(&files.table))?;
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    fs::write(&files.results, json).map_err(io_err(&files.results))?;
    let mut csv = String::from("agent,opponent,games,wins,win_rate_pct,ci_halfwidth_pct\n");
    for r in reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.1},{:.1}",
            r.agent_a,
            r.agent_b,
            r.games,
            r.wins,
            100.0 * r.win_rate,
            r.ci_halfwidth
        );
    }
    fs::write(&files.plot_data, csv).map_err(io_err(&files.plot_data))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{HeuristicFactory, RandomFactory};

    #[test]
    fn table_one_halfwidths() {
        let rows = [
            (100, 20, 7.8),
            (100, 17, 7.4),
            (95, 35, 9.7),
            (61, 19, 11.6),
            (36, 14, 15.9),
            (29, 8, 16.3),
            (10000, 5850, 1.0),
            (20, 10, 21.9),
            (25, 16, 18.8),
        ];
        for (n, w, want) in rows {
            assert_eq!(ci_halfwidth(n, w), want, "n={n} wins={w}");
        }
    }

    #[test]
    fn degenerate_rates_have_zero_width() {
        assert_eq!(ci_halfwidth(1, 0), 0.0);
        assert_eq!(ci_halfwidth(1, 1), 0.0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn single_game_match() {
        let r = run_match(&RandomFactory, &RandomFactory, 1, 4).unwrap();
        assert_eq!(r.games, 1);
        assert!(r.win_rate == 0.0 || r.win_rate == 1.0);
        assert_eq!(r.ci_halfwidth, 0.0);
        assert!(run_match(&RandomFactory, &RandomFactory, 0, 4).is_err());
    }

    #[test]
    fn reports_are_reproducible_and_seats_alternate() {
        let a = run_match(&HeuristicFactory, &RandomFactory, 20, 9).unwrap();
        let b = run_match(&HeuristicFactory, &RandomFactory, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seat_balance.a_first_games, 10);
        assert_eq!(a.seat_balance.a_second_games, 10);
        assert!(a.records.iter().all(|r| r.a_seat == (r.game % 2) as usize));
    }

    struct Failing;

    impl Agent for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn decide(&mut self, _: &PlayerView, _: &[HistoryEvent]) -> Result<AgentDecision, AgentError> {
            Err(AgentError::Failed("boom".into()))
        }
    }

    struct FailingFactory;

    impl AgentFactory for FailingFactory {
        fn name(&self) -> String {
            "failing".into()
        }

        fn build(&self, _: u64) -> Result<Box<dyn Agent>, AgentError> {
            Ok(Box::new(Failing))
        }
    }

    #[test]
    fn erroring_agent_forfeits_every_game() {
        let r = run_match(&FailingFactory, &RandomFactory, 6, 1).unwrap();
        assert_eq!(r.wins, 0);
        assert_eq!(r.forfeits_a, 6);
        assert_eq!(r.forfeits_b, 0);
    }

    #[test]
    fn logs_replay_to_the_recorded_winner() {
        let dir = tempfile::tempdir().unwrap();
        let opts = MatchOptions { log_dir: Some(dir.path().to_path_buf()), ..MatchOptions::default() };
        let r = run_match_with(&HeuristicFactory, &RandomFactory, 4, 2, &opts).unwrap();
        for rec in &r.records {
            let text = fs::read_to_string(game_log_path(dir.path(), rec.game)).unwrap();
            let state = GameLog::parse(&text).unwrap().replay().unwrap();
            assert_eq!(state.winner(), rec.outcome.winner);
        }
    }

    #[test]
    fn empty_report_has_header_only() {
        assert_eq!(render_table(&[]).lines().count(), 1);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[], dir.path()).unwrap();
        assert_eq!(fs::read_to_string(files.plot_data).unwrap().lines().count(), 1);
        assert_eq!(fs::read_to_string(files.results).unwrap().trim(), "[]");
    }

    #[test]
    fn one_report_one_row() {
        let r = MatchReport::from_records("x".into(), "y".into(), Vec::new(), None);
        let r = MatchReport { games: 100, wins: 20, win_rate: 0.2, ci_halfwidth: 7.8, ..r };
        let table = render_table(std::slice::from_ref(&r));
        assert_eq!(table.lines().count(), 2);
        assert!(table.lines().nth(1).unwrap().ends_with("20.0 ± 7.8"));
    }
}
