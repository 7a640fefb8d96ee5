//! `descent` command line.

use crate::config::RunConfig;
use crate::eval::{run_monte_carlo, Pilot, ScenarioSpec, SCENARIO_TABLE};
use crate::logs::{miss_scatter, read_actions, write_atomic, write_records, CsvAppender, Trajectory};
use crate::manifest::{manifest_path, RunManifest};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use descent_rl::ppo::{build_ic_pool, TrainError};
use descent_rl::{Agent, Trainer};
use descent_sim::env::{Environment, EpisodeMode, LandingStart, Segment};
use descent_sim::Scenario;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "descent", version, about = "Lunar powered-descent guidance: training, evaluation and simulation")]
pub struct Cli {
    /// Run configuration (TOML); defaults are used for anything missing.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the guidance-segment policy.
    TrainGuidance(TrainArgs),
    /// Train the landing-segment policy from an initial-condition pool.
    TrainLanding(TrainLandingArgs),
    /// Collect landing-segment start states by flying a guidance policy.
    BuildIcPool(PoolArgs),
    /// Monte Carlo evaluation over one or more scenarios.
    Evaluate(EvalArgs),
    /// Fly one episode and write its trajectory.
    Simulate(SimArgs),
    /// Re-run the actions recorded in a trajectory file.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total training episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a saved trainer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Save trainer state every N batches.
    #[arg(long, default_value_t = 10)]
    pub save_every: usize,
}

#[derive(Debug, Args)]
pub struct TrainLandingArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Initial-condition pool from `build-ic-pool`.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Guidance policy checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pool size.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Guidance policy checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Landing policy checkpoint.
    #[arg(long)]
    pub landing_checkpoint: PathBuf,
    /// Scenario label (Optim, AF=0.7, MV=0.1, DJ=30); `table` runs all four.
    #[arg(long, default_value = "Optim")]
    pub scenario: Vec<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Guidance policy checkpoint; without checkpoints a constant throttle flies.
    #[arg(long, requires = "landing_checkpoint")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub landing_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.35)]
    pub throttle: f64,
    /// Trajectory CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory CSV whose action columns are replayed.
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::TrainGuidance(a) => train(config, &a, None),
        Command::TrainLanding(a) => train(config, &a.train, Some(a.pool.as_deref())),
        Command::BuildIcPool(a) => pool(config, &a),
        Command::Evaluate(a) => evaluate(config, &a),
        Command::Simulate(a) => simulate(config, &a),
        Command::Replay(a) => replay(config, &a),
    }
}

fn load_agent(path: &Path, segment: Segment) -> Result<Agent> {
    Agent::load_for(path, segment).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn train(mut config: RunConfig, a: &TrainArgs, landing_pool: Option<Option<&Path>>) -> Result<()> {
    let start = Instant::now();
    let segment = if landing_pool.is_some() { Segment::Landing } else { Segment::Guidance };
    let name = match segment {
        Segment::Guidance => "guidance",
        Segment::Landing => "landing",
    };
    let mut trainer = match &a.resume {
        Some(p) => {
            let t = Trainer::load(p).with_context(|| format!("cannot load trainer state {}", p.display()))?;
            if t.agent.segment != segment {
                bail!("{} holds {:?} trainer state", p.display(), t.agent.segment);
            }
            t
        }
        None => {
            let tc = match segment {
                Segment::Guidance => &mut config.guidance,
                Segment::Landing => &mut config.landing,
            };
            if let Some(s) = a.seed {
                tc.seed = s;
            }
            if let Some(s) = a.scenario {
                config.episode.scenario = s;
            }
            let tc = match segment {
                Segment::Guidance => config.guidance.clone(),
                Segment::Landing => config.landing.clone(),
            };
            match landing_pool {
                None => Trainer::guidance(tc, config.episode.clone()),
                Some(p) => {
                    let p = p.context("train-landing needs --pool or --resume")?;
                    let text = std::fs::read_to_string(p).with_context(|| format!("cannot read pool {}", p.display()))?;
                    let pool: Vec<LandingStart> = serde_json::from_str(&text).with_context(|| format!("invalid pool {}", p.display()))?;
                    Trainer::landing(tc, config.episode.clone(), pool)?
                }
            }
        }
    };
    if let Some(n) = a.episodes {
        trainer.config.total_episodes = n;
    }
    std::fs::create_dir_all(&a.out)?;
    let curve_path = a.out.join("learning_curve.csv");
    let state_path = a.out.join("trainer_state.json");
    let agent_path = a.out.join(format!("{name}.json"));
    let mut curve = CsvAppender::open(&curve_path)?;
    let every = a.save_every.max(1);
    let rows = trainer.train(|row, _, t| {
        curve.push(row)?;
        log::info!(
            "{name} batch {} episodes {} reward {:.3} miss {:.2} speed {:.2} kl {:.2e}",
            row.batch,
            row.episodes,
            row.reward_mean,
            row.miss_mean,
            row.speed_mean,
            row.kl
        );
        if (row.batch + 1) % every == 0 {
            t.save(&state_path)?;
            t.agent.save(&agent_path)?;
        }
        Ok::<(), TrainError>(())
    })?;
    trainer.save(&state_path)?;
    trainer.agent.save(&agent_path)?;
    let mut m = RunManifest::new(&format!("train-{name}"), trainer.config.seed, &config);
    m.config.episode = trainer.env.clone();
    match segment {
        Segment::Guidance => m.config.guidance = trainer.config.clone(),
        Segment::Landing => m.config.landing = trainer.config.clone(),
    }
    m.inputs.extend(a.resume.clone());
    m.outputs = vec![curve_path, state_path, agent_path];
    m.elapsed_s = start.elapsed().as_secs_f64();
    m.write(&a.out.join("manifest.json"))?;
    if let Some(last) = rows.last() {
        println!("{name}: {} episodes, final batch reward {:.3} ± {:.3}", last.episodes, last.reward_mean, last.reward_std);
    }
    Ok(())
}

fn pool(mut config: RunConfig, a: &PoolArgs) -> Result<()> {
    let start = Instant::now();
    let agent = load_agent(&a.checkpoint, Segment::Guidance)?;
    if let Some(n) = a.episodes {
        config.pool.size = n;
    }
    if let Some(s) = a.seed {
        config.pool.seed = s;
    }
    if let Some(s) = a.scenario {
        config.episode.scenario = s;
    }
    let pool = build_ic_pool(&agent, &config.episode, config.pool.size, config.pool.seed, config.pool.max_episodes)?;
    write_atomic(&a.out, serde_json::to_string(&pool)?.as_bytes())?;
    let mut m = RunManifest::new("build-ic-pool", config.pool.seed, &config);
    m.inputs.push(a.checkpoint.clone());
    m.outputs.push(a.out.clone());
    m.elapsed_s = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&a.out))?;
    println!("pool: {} start states", pool.len());
    Ok(())
}

fn scenarios(labels: &[String]) -> Result<Vec<Scenario>> {
    let mut out = vec![];
    for l in labels {
        if l.eq_ignore_ascii_case("table") {
            out.extend(SCENARIO_TABLE);
        } else {
            out.push(l.parse()?);
        }
    }
    Ok(out)
}

fn evaluate(mut config: RunConfig, a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let scenarios = scenarios(&a.scenario)?;
    let guidance = load_agent(&a.checkpoint, Segment::Guidance)?;
    let landing = load_agent(&a.landing_checkpoint, Segment::Landing)?;
    let pilot = Pilot::policies(&guidance, &landing)?;
    if let Some(n) = a.episodes {
        config.evaluation.episodes = n;
    }
    if let Some(s) = a.seed {
        config.evaluation.seed = s;
    }
    let mut rows = vec![];
    let mut files = vec![];
    for s in scenarios {
        let spec = ScenarioSpec::new(s, config.evaluation.episodes, config.evaluation.seed);
        let ev = run_monte_carlo(&spec, &config.episode, &pilot)?;
        let tag = s.to_string().replace('=', "_");
        files.push((format!("terminal_{tag}.csv"), crate::logs::records_csv(&ev.records)?));
        files.push((format!("miss_{tag}.csv"), crate::logs::records_csv(&miss_scatter(&ev.records))?));
        println!(
            "{:<8} success {:5.1}%  miss {:.2}±{:.2} m  speed {:.2}±{:.2} m/s  fuel {:.1}±{:.1} kg",
            ev.row.scenario, ev.row.success_pct, ev.row.miss_mean, ev.row.miss_std, ev.row.speed_mean, ev.row.speed_std, ev.row.fuel_mean, ev.row.fuel_std
        );
        rows.push(ev.row);
    }
    std::fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("evaluate", config.evaluation.seed, &config);
    for (name, bytes) in files {
        let p = a.out.join(name);
        write_atomic(&p, &bytes)?;
        m.outputs.push(p);
    }
    let report = a.out.join("report.csv");
    write_records(&report, &rows)?;
    write_atomic(&a.out.join("report.json"), serde_json::to_string_pretty(&rows)?.as_bytes())?;
    m.inputs = vec![a.checkpoint.clone(), a.landing_checkpoint.clone()];
    m.outputs.extend([report, a.out.join("report.json")]);
    m.elapsed_s = start.elapsed().as_secs_f64();
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn simulate(mut config: RunConfig, a: &SimArgs) -> Result<()> {
    let start = Instant::now();
    if let Some(s) = a.scenario {
        config.episode.scenario = s;
    }
    let agents = match (&a.checkpoint, &a.landing_checkpoint) {
        (Some(g), Some(l)) => Some((load_agent(g, Segment::Guidance)?, load_agent(l, Segment::Landing)?)),
        _ => None,
    };
    let pilot = match &agents {
        Some((g, l)) => Pilot::policies(g, l)?,
        None => Pilot::Constant(a.throttle),
    };
    let mut env = Environment::new(config.episode.clone());
    let mut traj = Trajectory::new();
    let t = pilot.fly(&mut env, a.seed, |r, act| traj.push(r, act));
    traj.write(&a.out)?;
    let mut m = RunManifest::new("simulate", a.seed, &config);
    m.inputs.extend(a.checkpoint.iter().chain(&a.landing_checkpoint).cloned());
    m.outputs.push(a.out.clone());
    m.elapsed_s = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&a.out))?;
    println!("{} after {} steps: miss {:.2} m, speed {:.2} m/s", t.termination.label(), t.steps, t.miss(), t.speed());
    Ok(())
}

fn replay(mut config: RunConfig, a: &ReplayArgs) -> Result<()> {
    let start = Instant::now();
    if let Some(s) = a.scenario {
        config.episode.scenario = s;
    }
    let actions = read_actions(&a.trajectory).with_context(|| format!("cannot read {}", a.trajectory.display()))?;
    let mut env = Environment::new(config.episode.clone());
    let mut traj = Trajectory::new();
    let mut r = env.reset(a.seed, EpisodeMode::Full);
    traj.push(&r, None);
    for act in &actions {
        if r.done {
            bail!("episode ended before the recorded actions ran out");
        }
        r = env.step(act);
        traj.push(&r, Some(act));
    }
    traj.write(&a.out)?;
    let mut m = RunManifest::new("replay", a.seed, &config);
    m.inputs.push(a.trajectory.clone());
    m.outputs.push(a.out.clone());
    m.elapsed_s = start.elapsed().as_secs_f64();
    m.write(&manifest_path(&a.out))?;
    println!("replayed {} steps", actions.len());
    Ok(())
}
