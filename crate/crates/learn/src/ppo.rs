//! Self-play collection, advantage estimation and clipped-surrogate updates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use davinci_core::encoding::{encode_view, index_to_action, legal_mask, ActionMask, NUM_ACTIONS};
use davinci_core::engine::{GameState, PlayerId, DEFAULT_HAND_SIZE, NUM_PLAYERS, REWARD_LOSS, REWARD_WIN};
use davinci_core::evaluation::DEFAULT_MAX_STEPS;

use crate::adam::{Adam, AdamConfig};
use crate::encoder::Batch;
use crate::network::{policy_row_grad, row_stats, sample_action, ActorCritic};
use crate::scalar::Scalar;
use crate::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coeff: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Transitions collected per update.
    pub buffer_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Samples per forward/backward pass inside a minibatch; gradients accumulate.
    pub chunk_size: usize,
    /// Games advanced in lockstep during collection.
    pub parallel_games: usize,
    pub hand_size: usize,
    pub max_game_steps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coeff: 0.01,
            epochs_per_update: 3,
            minibatch_size: 2048,
            buffer_size: 16384,
            actor_lr: 5e-4,
            critic_lr: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            chunk_size: 128,
            parallel_games: 32,
            hand_size: DEFAULT_HAND_SIZE,
            max_game_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("clip_epsilon", self.clip_epsilon),
            ("entropy_coeff", self.entropy_coeff),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(LearnError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("epochs_per_update", self.epochs_per_update),
            ("minibatch_size", self.minibatch_size),
            ("buffer_size", self.buffer_size),
            ("chunk_size", self.chunk_size),
            ("parallel_games", self.parallel_games),
            ("hand_size", self.hand_size),
            ("max_game_steps", self.max_game_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(LearnError::Config(format!("{name} must be positive")));
            }
        }
        if self.clip_epsilon >= 1.0 {
            return Err(LearnError::Config("clip_epsilon must be below 1".into()));
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 || self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(LearnError::Config("gamma and gae_lambda must be at most 1, Adam betas below 1".into()));
        }
        Ok(())
    }

    pub fn actor_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.actor_lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn critic_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.critic_lr, ..self.actor_adam() }
    }

    pub fn optimizers(&self, model: &ActorCritic<f32>) -> [Adam<f32>; 2] {
        [Adam::new(self.actor_adam(), &model.actor), Adam::new(self.critic_adam(), &model.critic)]
    }
}

/// One decision from the acting player's perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Non-PAD token prefix of the encoded state.
    pub state: Vec<u16>,
    pub mask: ActionMask,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub log_prob: f32,
    pub value: f32,
}

/// Transitions laid out as contiguous per-player trajectories, each ending in `done`.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBuffer {
    pub capacity: usize,
    pub transitions: Vec<Transition>,
    advantages: Option<Vec<f64>>,
    returns: Option<Vec<f64>>,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    /// Appends a finished trajectory. Invalidates previously computed advantages.
    pub fn extend(&mut self, trajectory: impl IntoIterator<Item = Transition>) {
        self.transitions.extend(trajectory);
        self.advantages = None;
        self.returns = None;
    }

    pub fn finalize(&mut self, config: &PpoConfig) {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value as f64).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, config);
        self.advantages = Some(adv);
        self.returns = Some(ret);
    }

    pub fn is_finalized(&self) -> bool {
        self.advantages.is_some()
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn returns(&self) -> Option<&[f64]> {
        self.returns.as_deref()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.advantages = None;
        self.returns = None;
    }
}

/// Backward GAE recursion. A trailing step without `done` bootstraps from zero.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], config: &PpoConfig) -> (Vec<f64>, Vec<f64>) {
    assert!(rewards.len() == values.len() && values.len() == dones.len(), "sequence lengths differ");
    let n = rewards.len();
    let (gamma, lambda) = (config.gamma, config.gae_lambda);
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_value = values[t];
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit (population) standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
pub fn clipped_objective<T: Scalar>(ratio: T, adv: T, eps: T) -> T {
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    (ratio * adv).min(clipped * adv)
}

/// Derivative of [`clipped_objective`] with respect to `log r`.
fn clipped_objective_dlog<T: Scalar>(ratio: T, adv: T, eps: T) -> T {
    let outside = (adv >= T::zero() && ratio > T::one() + eps) || (adv < T::zero() && ratio < T::one() - eps);
    if outside {
        T::zero()
    } else {
        ratio * adv
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectStats {
    pub games: u64,
    pub transitions: u64,
    pub discarded_games: u64,
    /// Games won by seat 0, a cheap self-play sanity signal.
    pub seat0_wins: u64,
}

struct LiveGame {
    state: GameState,
    steps: usize,
    trajectories: [Vec<Transition>; NUM_PLAYERS],
}

impl LiveGame {
    fn len(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    /// Closes both trajectories: the last transition of each player carries the terminal
    /// reward from that player's side.
    fn into_trajectories(mut self) -> Vec<Transition> {
        let winner = self.state.winner();
        let mut out = Vec::with_capacity(self.len());
        for (p, traj) in self.trajectories.iter_mut().enumerate() {
            if let Some(last) = traj.last_mut() {
                last.done = true;
                last.reward = if winner == Some(p as PlayerId) { REWARD_WIN } else { REWARD_LOSS };
            }
            out.append(traj);
        }
        out
    }
}

/// Plays self-play games with both seats sampled from `model` until `buffer` holds at
/// least `config.buffer_size` transitions. Games in flight when the target is reached
/// run to completion.
pub fn collect(
    model: &ActorCritic<f32>,
    config: &PpoConfig,
    buffer: &mut TrajectoryBuffer,
    seed: u64,
) -> Result<CollectStats, LearnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CollectStats::default();
    let mut live: Vec<LiveGame> = Vec::new();
    loop {
        let in_flight: usize = live.iter().map(LiveGame::len).sum();
        while live.len() < config.parallel_games && buffer.len() + in_flight < config.buffer_size {
            let state = GameState::new(rng.random(), config.hand_size)?;
            live.push(LiveGame { state, steps: 0, trajectories: Default::default() });
        }
        if live.is_empty() {
            return Ok(stats);
        }

        let mut inputs = Vec::with_capacity(live.len());
        let mut broken = vec![false; live.len()];
        for (i, g) in live.iter().enumerate() {
            let view = g.state.view(g.state.current_player());
            let encoded = encode_view(&view, g.state.history()).map_err(LearnError::from).and_then(|e| {
                let mask = legal_mask(&view.legal_actions)?;
                Ok((e.content().to_vec(), mask))
            });
            match encoded {
                Ok(x) => inputs.push(x),
                Err(_) => {
                    broken[i] = true;
                    inputs.push((Vec::new(), ActionMask::default()));
                }
            }
        }
        let rows: Vec<usize> = (0..live.len()).filter(|i| !broken[*i]).collect();
        let batch = Batch::from_contents(rows.iter().map(|i| inputs[*i].0.as_slice()));
        let masks: Vec<ActionMask> = rows.iter().map(|i| inputs[*i].1).collect();
        let evals = model.evaluate(&batch, &masks)?;

        let mut finished = vec![false; live.len()];
        for (row, &i) in rows.iter().enumerate() {
            let (stats_row, value) = &evals[row];
            let mask = masks[row];
            let action = sample_action(&stats_row.logp, &mask, &mut rng);
            let g = &mut live[i];
            let player = g.state.current_player();
            let outcome = index_to_action(action).map_err(LearnError::from).and_then(|a| Ok(g.state.apply(a)?));
            let Ok(t) = outcome else {
                broken[i] = true;
                continue;
            };
            g.steps += 1;
            g.trajectories[player].push(Transition {
                state: std::mem::take(&mut inputs[i].0),
                mask,
                action,
                reward: t.reward,
                done: false,
                log_prob: stats_row.logp[action],
                value: *value,
            });
            if t.done {
                finished[i] = true;
            } else if g.steps >= config.max_game_steps {
                broken[i] = true;
            }
        }

        let mut kept = Vec::with_capacity(live.len());
        for (i, g) in live.drain(..).enumerate() {
            if broken[i] {
                stats.discarded_games += 1;
            } else if finished[i] {
                stats.games += 1;
                stats.seat0_wins += u64::from(g.state.winner() == Some(0));
                let traj = g.into_trajectories();
                stats.transitions += traj.len() as u64;
                buffer.extend(traj);
            } else {
                kept.push(g);
            }
        }
        live = kept;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub samples: u64,
    pub mean_actor_loss: f64,
    pub mean_critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Default)]
struct Sums {
    n: u64,
    actor: f64,
    critic: f64,
    entropy: f64,
    clipped: u64,
    kl: f64,
}

fn non_finite(what: &str, update: u64) -> LearnError {
    LearnError::NonFinite { what: what.into(), update }
}

fn grads_finite(net: &crate::network::Network<f32>) -> bool {
    net.params().iter().all(|(_, p)| p.grad.iter().all(|g| g.is_finite()))
}

/// Epochs of shuffled minibatch updates over a finalized buffer. Dropout is active.
///
/// `update` only labels diagnostics; all randomness comes from `seed`.
pub fn ppo_update(
    model: &mut ActorCritic<f32>,
    optimizers: &mut [Adam<f32>; 2],
    buffer: &TrajectoryBuffer,
    config: &PpoConfig,
    seed: u64,
    update: u64,
) -> Result<UpdateStats, LearnError> {
    let (Some(adv), Some(returns)) = (buffer.advantages(), buffer.returns()) else {
        return Err(LearnError::Config("buffer must be finalized before an update".into()));
    };
    let adv = normalize_advantages(adv);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = config.clip_epsilon as f32;
    let ent = config.entropy_coeff as f32;
    let mut sums = Sums::default();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    model.actor.zero_grad();
    model.critic.zero_grad();
    for _ in 0..config.epochs_per_update {
        order.shuffle(&mut rng);
        for minibatch in order.chunks(config.minibatch_size) {
            let b = minibatch.len() as f32;
            let mut mb = Sums::default();
            for chunk in minibatch.chunks(config.chunk_size) {
                let batch = Batch::from_contents(chunk.iter().map(|&i| buffer.transitions[i].state.as_slice()));

                let (logits, cache) = model.actor.forward_cached(&batch, Some(&mut rng))?;
                let mut dlogits = vec![0.0f32; logits.len()];
                for (j, &i) in chunk.iter().enumerate() {
                    let t = &buffer.transitions[i];
                    let row = j * NUM_ACTIONS..(j + 1) * NUM_ACTIONS;
                    let stats = row_stats(&logits[row.clone()], &t.mask)?;
                    let logp = stats.logp[t.action];
                    let ratio = (logp - t.log_prob).exp();
                    let a = adv[i] as f32;
                    mb.actor += f64::from(-clipped_objective(ratio, a, eps) - ent * stats.entropy);
                    mb.entropy += f64::from(stats.entropy);
                    mb.clipped += u64::from((ratio - 1.0).abs() > eps);
                    mb.kl += f64::from(t.log_prob - logp);
                    let g = clipped_objective_dlog(ratio, a, eps);
                    policy_row_grad(&stats, &t.mask, t.action, -g / b, -ent / b, &mut dlogits[row]);
                }
                model.actor.backward(&batch, &cache, &dlogits);

                let (values, cache) = model.critic.forward_cached(&batch, Some(&mut rng))?;
                let mut dvalues = vec![0.0f32; values.len()];
                for (j, &i) in chunk.iter().enumerate() {
                    let diff = values[j] - returns[i] as f32;
                    mb.critic += f64::from(diff * diff);
                    dvalues[j] = 2.0 * diff / b;
                }
                model.critic.backward(&batch, &cache, &dvalues);
            }
            if !(mb.actor.is_finite() && mb.critic.is_finite() && mb.entropy.is_finite()) {
                return Err(non_finite("loss", update));
            }
            if !grads_finite(&model.actor) || !grads_finite(&model.critic) {
                return Err(non_finite("gradient", update));
            }
            optimizers[0].step(&mut model.actor);
            optimizers[1].step(&mut model.critic);
            sums.n += minibatch.len() as u64;
            sums.actor += mb.actor;
            sums.critic += mb.critic;
            sums.entropy += mb.entropy;
            sums.clipped += mb.clipped;
            sums.kl += mb.kl;
        }
    }
    let n = sums.n.max(1) as f64;
    Ok(UpdateStats {
        samples: sums.n,
        mean_actor_loss: sums.actor / n,
        mean_critic_loss: sums.critic / n,
        entropy: sums.entropy / n,
        clip_fraction: sums.clipped as f64 / n,
        approx_kl: sums.kl / n,
    })
}

/// Losses of the current parameters on a finalized buffer, evaluation mode, no update.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `mean(min(r·Â, clip(r)·Â))` with normalized advantages.
    pub surrogate: f64,
    pub mean_advantage: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub critic_loss: f64,
    pub max_abs_log_ratio: f64,
}

pub fn evaluate_losses(
    model: &ActorCritic<f32>,
    buffer: &TrajectoryBuffer,
    config: &PpoConfig,
) -> Result<LossReport, LearnError> {
    let (Some(adv), Some(returns)) = (buffer.advantages(), buffer.returns()) else {
        return Err(LearnError::Config("buffer must be finalized".into()));
    };
    let adv = normalize_advantages(adv);
    let eps = config.clip_epsilon as f32;
    let n = buffer.len().max(1) as f64;
    let mut report =
        LossReport { surrogate: 0.0, mean_advantage: 0.0, clip_fraction: 0.0, entropy: 0.0, critic_loss: 0.0, max_abs_log_ratio: 0.0 };
    let indices: Vec<usize> = (0..buffer.len()).collect();
    for chunk in indices.chunks(config.chunk_size) {
        let batch = Batch::from_contents(chunk.iter().map(|&i| buffer.transitions[i].state.as_slice()));
        let masks: Vec<ActionMask> = chunk.iter().map(|&i| buffer.transitions[i].mask).collect();
        for ((stats, value), &i) in model.evaluate(&batch, &masks)?.into_iter().zip(chunk) {
            let t = &buffer.transitions[i];
            let log_ratio = stats.logp[t.action] - t.log_prob;
            let ratio = log_ratio.exp();
            let a = adv[i] as f32;
            report.surrogate += f64::from(clipped_objective(ratio, a, eps)) / n;
            report.mean_advantage += adv[i] / n;
            report.clip_fraction += f64::from(u8::from((ratio - 1.0).abs() > eps)) / n;
            report.entropy += f64::from(stats.entropy) / n;
            report.critic_loss += (f64::from(value) - returns[i]).powi(2) / n;
            report.max_abs_log_ratio = report.max_abs_log_ratio.max(f64::from(log_ratio.abs()));
        }
    }
    Ok(report)
}

/// Degenerate one-step environment: a single fixed state, every action legal, and a
/// reward of 1 for one target action.
#[derive(Debug, Clone)]
pub struct Bandit {
    pub state: Vec<u16>,
    pub mask: ActionMask,
    pub target: usize,
}

impl Bandit {
    /// Uses the opening view of a seeded game as the fixed observation.
    pub fn new(target: usize, seed: u64) -> Result<Self, LearnError> {
        let game = GameState::new(seed, DEFAULT_HAND_SIZE)?;
        let state = encode_view(&game.view(0), game.history())?.content().to_vec();
        let mask = ActionMask::from_bools(&[true; NUM_ACTIONS]);
        Ok(Self { state, mask, target })
    }

    pub fn collect(&self, model: &ActorCritic<f32>, n: usize, rng: &mut impl Rng) -> Result<TrajectoryBuffer, LearnError> {
        let batch = Batch::from_contents([self.state.as_slice()]);
        let (stats, value) = model.evaluate(&batch, &[self.mask])?.remove(0);
        let mut buffer = TrajectoryBuffer::new(n);
        buffer.extend((0..n).map(|_| {
            let action = sample_action(&stats.logp, &self.mask, rng);
            Transition {
                state: self.state.clone(),
                mask: self.mask,
                action,
                reward: if action == self.target { 1.0 } else { 0.0 },
                done: true,
                log_prob: stats.logp[action],
                value,
            }
        }));
        Ok(buffer)
    }

    /// Runs `updates` collect/update rounds of `config.buffer_size` pulls each and returns
    /// the target's probability after every round.
    pub fn train(
        &self,
        model: &mut ActorCritic<f32>,
        config: &PpoConfig,
        updates: u64,
        seed: u64,
    ) -> Result<Vec<f64>, LearnError> {
        let mut optimizers = config.optimizers(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut history = Vec::new();
        for update in 1..=updates {
            let mut buffer = self.collect(model, config.buffer_size, &mut rng)?;
            buffer.finalize(config);
            ppo_update(model, &mut optimizers, &buffer, config, rng.random(), update)?;
            history.push(self.target_probability(model)?);
        }
        Ok(history)
    }

    pub fn target_probability(&self, model: &ActorCritic<f32>) -> Result<f64, LearnError> {
        let batch = Batch::from_contents([self.state.as_slice()]);
        let (stats, _) = model.evaluate(&batch, &[self.mask])?.remove(0);
        Ok(f64::from(stats.logp[self.target]).exp())
    }
}
