//! The training loop: collect, estimate advantages, update, evaluate, checkpoint.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use davinci_core::agents::{AgentFactory, HeuristicFactory, RandomFactory};
use davinci_core::evaluation::{derive_seed, run_match_with, MatchOptions};

use crate::adam::Adam;
use crate::agent::PpoFactory;
use crate::checkpoint::{self, Checkpoint};
use crate::network::{ActorCritic, NetworkConfig};
use crate::ppo::{collect, ppo_update, CollectStats, PpoConfig, TrajectoryBuffer, UpdateStats};
use crate::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    pub seed: u64,
    pub total_updates: u64,
    /// Evaluation games per opponent after every update; 0 skips evaluation.
    pub eval_games: u64,
    /// Checkpoint after every this many updates; 0 only checkpoints at the end.
    pub checkpoint_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
            seed: 0,
            total_updates: 1,
            eval_games: 100,
            checkpoint_every: 10,
            checkpoint_path: None,
            metrics_path: None,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub mean_actor_loss: f64,
    pub mean_critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub transitions: u64,
    pub games: u64,
    pub discarded_games: u64,
    pub winrate_vs_random: Option<f64>,
    pub winrate_vs_heuristic: Option<f64>,
}

impl MetricsRow {
    fn new(update: u64, c: &CollectStats, u: &UpdateStats) -> Self {
        Self {
            update,
            mean_actor_loss: u.mean_actor_loss,
            mean_critic_loss: u.mean_critic_loss,
            entropy: u.entropy,
            clip_fraction: u.clip_fraction,
            approx_kl: u.approx_kl,
            transitions: c.transitions,
            games: c.games,
            discarded_games: c.discarded_games,
            winrate_vs_random: None,
            winrate_vs_heuristic: None,
        }
    }
}

/// Loop state stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    seed: u64,
    /// Number of completed updates; the next one is `completed + 1`.
    completed: u64,
    ppo: PpoConfig,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: ActorCritic<f32>,
    pub optimizers: [Adam<f32>; 2],
    pub completed: u64,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LearnError + '_ {
    move |source| LearnError::Io { context: path.display().to_string(), source }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, LearnError> {
        config.ppo.validate()?;
        let model = ActorCritic::new(config.network.clone(), derive_seed(config.seed, u64::MAX))?;
        let optimizers = config.ppo.optimizers(&model);
        Ok(Self { config, model, optimizers, completed: 0 })
    }

    /// Continues from a training checkpoint. Seed and PPO settings come from the file;
    /// update counts, evaluation and output settings from `config`.
    pub fn resume(mut config: TrainConfig, path: &Path) -> Result<Self, LearnError> {
        let ckpt = checkpoint::load(path)?;
        let progress: Progress = ckpt
            .training
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| LearnError::Checkpoint(format!("unreadable training state: {e}")))?
            .ok_or_else(|| LearnError::Checkpoint("model-only checkpoint cannot resume training".into()))?;
        let optimizers = ckpt.optimizers.ok_or_else(|| LearnError::Checkpoint("missing optimizer state".into()))?;
        config.seed = progress.seed;
        config.ppo = progress.ppo;
        config.network = ckpt.model.config().clone();
        Ok(Self { config, model: ckpt.model, optimizers, completed: progress.completed })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let progress = Progress { seed: self.config.seed, completed: self.completed, ppo: self.config.ppo.clone() };
        Checkpoint {
            model: self.model.clone(),
            optimizers: Some(self.optimizers.clone()),
            training: Some(serde_json::to_value(progress).expect("progress serializes")),
        }
    }

    /// Runs the next update. Everything random derives from the seed and the update number.
    pub fn step(&mut self) -> Result<MetricsRow, LearnError> {
        let update = self.completed + 1;
        let base = derive_seed(self.config.seed, update);
        let ppo = &self.config.ppo;
        let mut buffer = TrajectoryBuffer::new(ppo.buffer_size);
        let collected = collect(&self.model, ppo, &mut buffer, derive_seed(base, 0))?;
        buffer.finalize(ppo);
        let stats = ppo_update(&mut self.model, &mut self.optimizers, &buffer, ppo, derive_seed(base, 1), update)?;
        if !(stats.entropy.is_finite() && stats.mean_critic_loss.is_finite()) {
            return Err(LearnError::NonFinite { what: "statistics".into(), update });
        }
        self.completed = update;
        let mut row = MetricsRow::new(update, &collected, &stats);
        if self.config.eval_games > 0 {
            let me = PpoFactory::new(self.model.actor.clone(), "ppo");
            let options = MatchOptions { hand_size: ppo.hand_size, ..MatchOptions::default() };
            let rate = |opp: &dyn AgentFactory, stream| {
                run_match_with(&me, opp, self.config.eval_games, derive_seed(base, stream), &options).map(|r| r.win_rate)
            };
            row.winrate_vs_random = Some(rate(&RandomFactory, 2)?);
            row.winrate_vs_heuristic = Some(rate(&HeuristicFactory, 3)?);
        }
        Ok(row)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        checkpoint::save(path, &self.checkpoint())
    }

    /// Runs until `total_updates` updates are complete, appending one metrics row per
    /// update. A failed checkpoint write aborts, leaving the trainer state intact.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>, LearnError> {
        let mut metrics = match &self.config.metrics_path {
            Some(path) => Some(open_metrics(path, self.completed > 0)?),
            None => None,
        };
        let mut rows = Vec::new();
        while self.completed < self.config.total_updates {
            let row = self.step()?;
            if let (Some(file), Some(path)) = (metrics.as_mut(), &self.config.metrics_path) {
                let line = serde_json::to_string(&row).expect("metrics serialize");
                writeln!(file, "{line}").and_then(|_| file.flush()).map_err(io(path))?;
            }
            on_row(&row);
            rows.push(row);
            let every = self.config.checkpoint_every;
            let due = every > 0 && self.completed.is_multiple_of(every);
            if let Some(path) = &self.config.checkpoint_path {
                if due || self.completed == self.config.total_updates {
                    self.save(path)?;
                }
            }
        }
        Ok(rows)
    }
}

fn open_metrics(path: &Path, append: bool) -> Result<File, LearnError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut options = OpenOptions::new();
    options.create(true);
    if append {
        options.append(true);
    } else {
        options.write(true).truncate(true);
    }
    options.open(path).map_err(io(path))
}

/// Fresh training run from `config`.
pub fn train_loop(config: TrainConfig) -> Result<(Trainer, Vec<MetricsRow>), LearnError> {
    let mut trainer = Trainer::new(config)?;
    let rows = trainer.run(|_| {})?;
    Ok((trainer, rows))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, LearnError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| LearnError::Checkpoint(format!("bad metrics row: {e}"))))
        .collect()
}
