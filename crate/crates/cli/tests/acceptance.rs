//! One line per acceptance criterion. Runs every criterion even after a failure and
//! exits non-zero if any failed. Arguments that do not start with `-` filter criteria by
//! substring, e.g. `cargo test --test acceptance -- gae`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use davinci_core::agents::{Agent, HeuristicFactory, RandomAgent, RandomFactory};
use davinci_core::audit::{audit_random_game, sample_position};
use davinci_core::deduction::{candidate_values, oracle_projections, ConstraintView, ORACLE_MAX_HIDDEN};
use davinci_core::encoding::{action_to_index, encode_view, index_to_action, legal_mask, ActionMask, NUM_ACTIONS, VOCAB_SIZE};
use davinci_core::engine::{Action, Color, GameState, LabelSet, TileLabel, VisibleTile, DEFAULT_HAND_SIZE};
use davinci_core::evaluation::{ci_halfwidth, derive_seed, run_match, DEFAULT_MAX_STEPS};
use davinci_core::llm_gateway::{
    parse_response, render_state_string, FallbackRegistry, FallbackUsed, LlmAgent, PromptBundle, ScriptedClient,
    TransportError,
};
use davinci_learn::agent::PpoFactory;
use davinci_learn::gradcheck::{check_gradients, Objective};
use davinci_learn::network::log_softmax;
use davinci_learn::ppo::{Bandit, PpoConfig};
use davinci_learn::train::{TrainConfig, Trainer};
use davinci_learn::{compute_gae, ActorCritic, NetworkConfig};
use davinci_service::audit;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ci_rows() -> Check {
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
    for (n, wins, want) in rows {
        let got = ci_halfwidth(n, wins);
        ensure(got == want, || format!("({n}, {wins}) gave {got}, expected {want}"))?;
    }
    Ok("9/9 rows exact".into())
}

fn engine_soundness() -> Check {
    let mut steps = 0;
    let mut longest = 0;
    for seed in 0..10_000u64 {
        let s = audit_random_game(seed, DEFAULT_HAND_SIZE, DEFAULT_MAX_STEPS).map_err(|e| e.to_string())?;
        steps += s.steps;
        longest = longest.max(s.steps);
    }
    Ok(format!("10000 games, mean {:.1} steps, longest {longest}", steps as f64 / 1e4))
}

fn deduction_oracle() -> Check {
    let mut positions = 0;
    let mut slots = 0;
    let mut singletons = 0;
    let mut seed = 0u64;
    while positions < 1000 {
        let pos = sample_position(seed);
        seed += 1;
        if pos.hidden_count() > ORACLE_MAX_HIDDEN.min(8) {
            continue;
        }
        let cv = ConstraintView::from_view(&pos.view);
        for (slot, exact) in oracle_projections(&cv, 5_000_000).map_err(|e| e.to_string())? {
            let got = candidate_values(&cv, slot).map_err(|e| e.to_string())?.labels;
            let truth = pos.truth[slot];
            ensure(exact.is_subset(got), || format!("seed {}: slot {slot} misses projected labels", seed - 1))?;
            ensure(got.contains(truth), || format!("seed {}: slot {slot} misses the true label", seed - 1))?;
            if got.len() == 1 {
                singletons += 1;
                ensure(got.iter().next() == Some(truth), || format!("seed {}: wrong singleton", seed - 1))?;
            }
            slots += 1;
        }
        positions += 1;
    }
    Ok(format!("{positions} positions, {slots} hidden slots, {singletons} singletons all correct"))
}

fn action_bijection() -> Check {
    for i in 0..NUM_ACTIONS {
        let action = index_to_action(i).map_err(|e| e.to_string())?;
        let back = action_to_index(action).map_err(|e| e.to_string())?.get();
        ensure(back == i, || format!("index {i} -> {action:?} -> {back}"))?;
    }
    ensure(index_to_action(NUM_ACTIONS).is_err(), || "index past the end decoded".into())?;
    for seed in 0..1000 {
        let pos = sample_position(seed);
        let mask = legal_mask(&pos.view.legal_actions).map_err(|e| e.to_string())?;
        let decoded: Vec<Action> = mask.indices().map(|i| index_to_action(i).unwrap()).collect();
        let mut expected = pos.view.legal_actions.clone();
        expected.sort_by_key(|a| action_to_index(*a).unwrap().get());
        ensure(decoded == expected && ActionMask::from_bools(&mask.to_bools()) == mask, || {
            format!("seed {seed}: mask round trip differs")
        })?;
    }
    Ok(format!("{NUM_ACTIONS} indices, 1000 masks"))
}

fn neural_numerics() -> Check {
    let mut worst = 0.0f64;
    let mut kinks = 0;
    for (obj, seed) in [(Objective::Critic, 1), (Objective::LogProb, 2), (Objective::Entropy, 3)] {
        let r = check_gradients(NetworkConfig::tiny(), obj, seed).map_err(|e| format!("{obj:?}: {e}"))?;
        worst = worst.max(r.worst_relative);
        kinks += r.kinks;
    }
    let model = ActorCritic::<f32>::new(NetworkConfig::default(), 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut norm_err = 0.0f64;
    for seed in 0..50 {
        let pos = sample_position(seed);
        let state = encode_view(&pos.view, pos.state.history()).map_err(|e| e.to_string())?;
        let mask = legal_mask(&pos.view.legal_actions).map_err(|e| e.to_string())?;
        let out = model.policy_output(&state, &mask).map_err(|e| e.to_string())?;
        let total: f64 = log_softmax(&out.masked_logits).iter().map(|l| f64::from(l.exp())).sum();
        norm_err = norm_err.max((total - 1.0).abs());
        let mut noisy = state.clone();
        let n = noisy.content_len();
        for id in &mut noisy.token_ids[n..] {
            *id = rng.random_range(0..VOCAB_SIZE as u16);
        }
        let pad_out = model.policy_output(&noisy, &mask).map_err(|e| e.to_string())?;
        ensure(pad_out == out, || format!("seed {seed}: PAD contents changed the output"))?;
    }
    ensure(norm_err <= 1e-6, || format!("masked softmax sums off by {norm_err:e}"))?;
    Ok(format!("gradients worst rel {worst:.1e} ({kinks} ReLU kinks rechecked), softmax err {norm_err:.1e}, PAD exact"))
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}`, truncated after the first `done`.
fn naive_gae(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta = |t: usize| r[t] + gamma * if d[t] || t + 1 == n { 0.0 } else { v[t + 1] } - v[t];
    (0..n)
        .map(|t| {
            let (mut sum, mut w) = (0.0, 1.0);
            for k in t..n {
                sum += w * delta(k);
                if d[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

fn gae_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let len = rng.random_range(1..=64);
        let r: Vec<f64> = (0..len).map(|_| [3.0, -3.0, 0.2, -0.5, 0.0][rng.random_range(0..5)]).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d: Vec<bool> = (0..len).map(|_| rng.random_bool(0.2)).collect();
        let config = PpoConfig { gamma: rng.random_range(0.5..=1.0), gae_lambda: rng.random_range(0.0..=1.0), ..PpoConfig::default() };
        let (adv, _) = compute_gae(&r, &v, &d, &config);
        let want = naive_gae(&r, &v, &d, config.gamma, config.gae_lambda);
        for t in 0..len {
            worst = worst.max((adv[t] - want[t]).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    let (adv, _) = compute_gae(&[-0.5, 3.0], &[0.0, 0.0], &[false, true], &PpoConfig::default());
    ensure((adv[0] - 2.34715).abs() <= 1e-9, || format!("A0 = {}", adv[0]))?;
    Ok(format!("2000 sequences, max deviation {worst:.1e}; A0 = {:.5}", adv[0]))
}

fn ppo_bandit() -> Check {
    let bandit = Bandit::new(123, 0).map_err(|e| e.to_string())?;
    let mut model = ActorCritic::<f32>::new(NetworkConfig::default(), 1).map_err(|e| e.to_string())?;
    let config = PpoConfig { buffer_size: 2048, minibatch_size: 256, ..PpoConfig::default() };
    let history = bandit.train(&mut model, &config, 50, 7).map_err(|e| e.to_string())?;
    let last = history[49];
    ensure(last > 0.9, || format!("target probability {last:.3} after 50 updates"))?;
    Ok(format!("target probability {last:.3} after 50 updates"))
}

fn ppo_progress() -> Check {
    let config = TrainConfig {
        ppo: PpoConfig { buffer_size: 4096, minibatch_size: 512, ..PpoConfig::default() },
        seed: 2024,
        total_updates: 30,
        eval_games: 0,
        checkpoint_every: 0,
        checkpoint_path: None,
        metrics_path: None,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    trainer
        .run(|row| {
            eprintln!(
                "    update {:>2}/30 entropy {:.3} critic {:.3} ({:.0}s)",
                row.update,
                row.entropy,
                row.mean_critic_loss,
                start.elapsed().as_secs_f64()
            )
        })
        .map_err(|e| e.to_string())?;
    let agent = PpoFactory::new(trainer.model.actor.clone(), "ppo");
    let report = run_match(&agent, &RandomFactory, 500, 77).map_err(|e| e.to_string())?;
    let summary = format!(
        "{} / 500 vs random = {:.1}% ± {:.1}",
        report.wins,
        100.0 * report.win_rate,
        report.ci_halfwidth
    );
    ensure(report.win_rate > 0.5 && report.ci_excludes_half(), || summary.clone())?;
    Ok(summary)
}

fn heuristic_dominance() -> Check {
    let report = run_match(&HeuristicFactory, &RandomFactory, 1000, 2024).map_err(|e| e.to_string())?;
    let b = report.seat_balance;
    ensure(b.a_first_games == 500 && b.a_second_games == 500, || "games not seat balanced".into())?;
    let summary = format!("{} / 1000 = {:.1}% ± {:.1}", report.wins, 100.0 * report.win_rate, report.ci_halfwidth);
    ensure(report.win_rate > 0.5 && report.ci_excludes_half(), || summary.clone())?;
    Ok(summary)
}

fn label(s: &str) -> TileLabel {
    s.parse().unwrap()
}

fn llm_robustness() -> Check {
    let registry = FallbackRegistry::default();
    let mut decisions = 0u64;
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 5));
        let client = ScriptedClient::new("fuzz", move |prompt: &PromptBundle| {
            let legal_line = prompt.user_text.lines().find_map(|l| l.strip_prefix("Legal actions: ")).unwrap_or("[]");
            let legal: Vec<Action> = serde_json::from_str(legal_line).unwrap_or_default();
            match rng.random_range(0..7) {
                0 => Err(TransportError::Timeout),
                1 => Ok("I'd rather not say.".into()),
                2 => Ok("{\"action\": \"guess\", \"position\": 99, \"card\": \"B5\"}".into()),
                3 => Ok("{\"action\":\"guess\",\"position\":0,\"card\":\"Q7\"}".into()),
                4 => Ok("{\"action\": \"place\"".into()),
                _ if legal.is_empty() => Ok("{}".into()),
                _ => Ok(serde_json::to_string(&legal[rng.random_range(0..legal.len())]).unwrap()),
            }
        });
        let mut g = GameState::new(seed, DEFAULT_HAND_SIZE).map_err(|e| e.to_string())?;
        let mut llm = LlmAgent::new(Box::new(client), seed).with_registry(registry.clone());
        let mut other = RandomAgent::new(seed + 1);
        let seat = (seed % 2) as usize;
        while !g.is_over() {
            let p = g.current_player();
            let view = g.view(p);
            let agent: &mut dyn Agent = if p == seat { &mut llm } else { &mut other };
            let action = agent.decide(&view, g.history()).map_err(|e| e.to_string())?.action;
            if p == seat {
                decisions += 1;
                ensure(view.legal_actions.contains(&action), || format!("seed {seed}: illegal {action:?}"))?;
            }
            g.apply(action).map_err(|e| e.to_string())?;
        }
    }
    let stats = registry.get("fuzz");
    ensure(stats.decisions == decisions, || "fallback counter missed decisions".into())?;

    let guesses: Vec<Action> = ["B1", "B2"].iter().map(|s| Action::Guess { position: 0, label: label(s) }).collect();
    let mut with_place = guesses.clone();
    with_place.push(Action::Place);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let a = parse_response("nonsense", &with_place, &mut rng).map_err(|e| e.to_string())?;
        ensure(a.action == Action::Place && a.fallback_used == FallbackUsed::PlaceFallback, || {
            "place not preferred".into()
        })?;
        let b = parse_response("nonsense", &guesses, &mut rng).map_err(|e| e.to_string())?;
        ensure(b.fallback_used == FallbackUsed::RandomGuessFallback && guesses.contains(&b.action), || {
            "random guess fallback not used".into()
        })?;
    }

    let mut view = GameState::new(8, 4).map_err(|e| e.to_string())?.view(0);
    view.opponent_hand_visible = vec![
        VisibleTile::Hidden { color: Color::Black },
        VisibleTile::Revealed { label: label("W7") },
        VisibleTile::Hidden { color: Color::White },
        VisibleTile::Hidden { color: Color::Black },
    ];
    view.opponent_wrong_guesses = vec![
        [label("B3"), label("B5")].into_iter().collect(),
        LabelSet::EMPTY,
        LabelSet::EMPTY,
        [label("B-")].into_iter().collect(),
    ];
    let text = render_state_string(&view, &[]);
    ensure(text.contains("Opponent hand: [B?:!3 5] [W7] [W?] [B?:!-]\n"), || format!("rendered {text:?}"))?;
    Ok(format!(
        "{decisions} fuzzed decisions all legal ({:.1}% fallback), place-first fallback, [B?:!3 5] rendering",
        100.0 * stats.fallback_rate()
    ))
}

fn service_integrity() -> Check {
    let fuzz = audit::fuzz_sessions(1000, 2024)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let restored = audit::restart_check(dir.path(), 50, 7)?;
    Ok(format!("{} sessions / {} payloads hide all unrevealed labels; {restored} sessions restored exactly", fuzz.sessions, fuzz.payloads))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 11] = [
        ("ci arithmetic regression", ci_rows),
        ("engine soundness", engine_soundness),
        ("deduction oracle", deduction_oracle),
        ("action-space bijection", action_bijection),
        ("neural numerics", neural_numerics),
        ("gae oracle", gae_oracle),
        ("heuristic dominance", heuristic_dominance),
        ("llm gateway robustness", llm_robustness),
        ("service integrity", service_integrity),
        ("ppo learning signal (a) bandit", ppo_bandit),
        ("ppo learning signal (b) game progress", ppo_progress),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
