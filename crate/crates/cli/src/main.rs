use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use davinci_core::agents::{AgentFactory, HeuristicFactory, RandomFactory};
use davinci_core::engine::{GameLog, GameState, DEFAULT_HAND_SIZE};
use davinci_core::evaluation::{
    derive_seed, emit_report, play_game, render_table, run_match_with, MatchOptions, DEFAULT_MAX_STEPS,
};
use davinci_core::llm_gateway::{FallbackRegistry, LlmConfig, LlmFactory};
use davinci_learn::agent::PpoFactory;
use davinci_learn::train::{TrainConfig, Trainer};
use davinci_learn::{NetworkConfig, PpoConfig};
use davinci_service::ServeConfig;

#[derive(Parser)]
#[command(name = "davinci", version, about = "Da Vinci Code engine, agents, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one game between two agents and print its history.
    Play(PlayArgs),
    /// Train the actor-critic agent with PPO self-play.
    Train(TrainArgs),
    /// Run head-to-head matches and write the results table, JSON and plot data.
    Eval(EvalArgs),
    /// Run the session server for human-vs-agent play.
    Serve(ServeArgs),
}

const AGENT_HELP: &str = "random | heuristic | ppo:<checkpoint> | llm:<config.json>";

#[derive(Args)]
struct PlayArgs {
    #[arg(long, default_value = "heuristic", help = AGENT_HELP)]
    first: String,
    #[arg(long, default_value = "random", help = AGENT_HELP)]
    second: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HAND_SIZE)]
    hand_size: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    /// Write the game log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    updates: u64,
    #[arg(long)]
    buffer_size: Option<usize>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    parallel_games: Option<usize>,
    /// Games against each baseline after every update; 0 disables.
    #[arg(long, default_value_t = 100)]
    eval_games: u64,
    /// Updates between checkpoints; 0 saves only at the end.
    #[arg(long, default_value_t = 10)]
    checkpoint_every: u64,
    #[arg(long, default_value = "runs/ppo.ckpt")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "runs/metrics.ndjson")]
    metrics: PathBuf,
    /// Continue from a training checkpoint; seed, network and PPO settings come from the file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// PPO settings as JSON; individual flags override it.
    #[arg(long)]
    ppo_config: Option<PathBuf>,
    /// Use the tiny network, for smoke runs.
    #[arg(long)]
    tiny: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, help = AGENT_HELP)]
    agent: String,
    /// One match per opponent.
    #[arg(long, required = true, help = AGENT_HELP)]
    opponent: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    games: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// Keep one game log per game under <out>/logs.
    #[arg(long)]
    save_logs: bool,
    #[arg(long, default_value_t = DEFAULT_HAND_SIZE)]
    hand_size: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Journal directory; sessions survive restarts when set.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Built web client to serve at /.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn agent_factory(spec: &str, registry: &FallbackRegistry) -> Result<Arc<dyn AgentFactory>> {
    Ok(match spec.split_once(':') {
        None if spec == "random" => Arc::new(RandomFactory),
        None if spec == "heuristic" => Arc::new(HeuristicFactory),
        Some(("ppo", path)) => {
            Arc::new(PpoFactory::from_checkpoint(Path::new(path)).with_context(|| format!("loading {path}"))?)
        }
        Some(("llm", path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let config: LlmConfig = serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
            config.validate()?;
            Arc::new(LlmFactory { config, registry: registry.clone() })
        }
        _ => bail!("unknown agent {spec:?}; expected {AGENT_HELP}"),
    })
}

fn play(args: PlayArgs) -> Result<()> {
    let registry = FallbackRegistry::default();
    let factories = [agent_factory(&args.first, &registry)?, agent_factory(&args.second, &registry)?];
    let mut first = factories[0].build(derive_seed(args.seed, 1))?;
    let mut second = factories[1].build(derive_seed(args.seed, 2))?;
    let mut state = GameState::new(args.seed, args.hand_size)?;
    let outcome = play_game(&mut state, [first.as_mut(), second.as_mut()], args.max_steps)?;
    for event in state.history() {
        println!("{}", serde_json::to_string(event)?);
    }
    match outcome.winner {
        Some(w) => println!("winner: seat {w} ({}) after {} decisions", factories[w].name(), outcome.steps),
        None => println!("no winner after {} decisions", outcome.steps),
    }
    if let Some(f) = outcome.forfeit {
        println!("seat {} forfeited: {}", f.seat, f.reason);
    }
    if let Some(path) = args.log {
        let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        GameLog::from_state(&state).write_to(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut ppo: PpoConfig = match &args.ppo_config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => PpoConfig::default(),
    };
    if let Some(v) = args.buffer_size {
        ppo.buffer_size = v;
    }
    if let Some(v) = args.minibatch_size {
        ppo.minibatch_size = v;
    }
    if let Some(v) = args.parallel_games {
        ppo.parallel_games = v;
    }
    ppo.validate()?;
    let config = TrainConfig {
        network: if args.tiny { NetworkConfig::tiny() } else { NetworkConfig::default() },
        ppo,
        seed: args.seed,
        total_updates: args.updates,
        eval_games: args.eval_games,
        checkpoint_every: args.checkpoint_every,
        checkpoint_path: Some(args.checkpoint),
        metrics_path: Some(args.metrics),
    };
    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(config, path)?,
        None => Trainer::new(config)?,
    };
    trainer.run(|row| {
        eprintln!(
            "update {:>4}  actor {:+.4}  critic {:.4}  entropy {:.3}  clip {:.3}  vs random {}  vs heuristic {}",
            row.update,
            row.mean_actor_loss,
            row.mean_critic_loss,
            row.entropy,
            row.clip_fraction,
            row.winrate_vs_random.map_or("-".into(), |w| format!("{:.1}%", 100.0 * w)),
            row.winrate_vs_heuristic.map_or("-".into(), |w| format!("{:.1}%", 100.0 * w)),
        )
    })?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let registry = FallbackRegistry::default();
    let agent = agent_factory(&args.agent, &registry)?;
    let mut reports = Vec::new();
    for (i, spec) in args.opponent.iter().enumerate() {
        let opponent = agent_factory(spec, &registry)?;
        let options = MatchOptions {
            hand_size: args.hand_size,
            max_steps: DEFAULT_MAX_STEPS,
            log_dir: args.save_logs.then(|| args.out.join("logs").join(format!("{i:02}-{}", sanitize(spec)))),
        };
        reports.push(run_match_with(agent.as_ref(), opponent.as_ref(), args.games, args.seed, &options)?);
    }
    let files = emit_report(&reports, &args.out)?;
    print!("{}", render_table(&reports));
    for (model, stats) in registry.snapshot() {
        println!("llm {model}: fallback rate {:.1}% over {} decisions", 100.0 * stats.fallback_rate(), stats.decisions);
    }
    eprintln!("wrote {}, {} and {}", files.table.display(), files.results.display(), files.plot_data.display());
    Ok(())
}

fn sanitize(spec: &str) -> String {
    spec.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = ServeConfig { data_dir: args.data_dir, static_dir: args.static_dir };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(davinci_service::serve(args.addr, config))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Play(args) => play(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Serve(args) => serve(args),
    }
}
