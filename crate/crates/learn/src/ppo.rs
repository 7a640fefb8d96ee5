//! Recurrent PPO: rollout collection, empirical-return advantages, clipped
//! surrogate updates with full-episode BPTT, and the adaptive KL servo.

use crate::networks::{gaussian_kl, gaussian_log_prob, gaussian_log_prob_grad, sample_gaussian, Network, NetworkSpec};
use descent_sim::env::{
    Environment, EpisodeMode, LandingStart, Segment, TerminalState, Termination, ACTION_DIM, GUIDANCE_OBS_DIM,
    LANDING_POLICY_OBS_DIM, LANDING_VALUE_OBS_DIM,
};
use descent_sim::{derive_seed, EpisodeConfig};
use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const STREAM_EPISODE: u64 = 1;
const STREAM_ACTION: u64 = 2;
const STREAM_WARMUP: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_POOL_PICK: u64 = 5;
const STREAM_POOL_BUILD: u64 = 6;
const STREAM_RETRY: u64 = 7;
const MAX_RETRIES: u64 = 16;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at batch {batch}: {reason}")]
    Diverged { batch: usize, reason: String },
    #[error("episode {index} aborted {MAX_RETRIES} times in a row")]
    Unrecoverable { index: u64 },
    #[error("landing training needs a non-empty initial-condition pool")]
    EmptyPool,
    #[error("checkpoint is for the {found:?} segment, expected {expected:?}")]
    WrongSegment { expected: Segment, found: Segment },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("network shape {found:?} does not match the environment {expected:?}")]
    Shape { expected: NetworkSpec, found: NetworkSpec },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    /// Plain gradient steps.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub gamma: f64,
    pub clip_eps: f64,
    pub clip_eps_min: f64,
    pub clip_eps_max: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub kl_target: f64,
    /// Servo acts when KL leaves `[kl_low·target, kl_high·target]`.
    pub kl_low: f64,
    pub kl_high: f64,
    pub lr_down: f64,
    pub lr_up: f64,
    pub eps_down: f64,
    pub eps_up: f64,
    pub epochs: usize,
    pub minibatch_episodes: usize,
    pub batch_episodes: usize,
    pub total_episodes: usize,
    pub normalize_advantages: bool,
    pub optimizer: Optimizer,
    pub max_grad_norm: Option<f64>,
    /// Episodes run before training to seed the observation statistics.
    pub warmup_episodes: usize,
    pub obs_var_floor: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 0.995,
            clip_eps: 0.2,
            clip_eps_min: 0.05,
            clip_eps_max: 0.3,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            lr_min: 1e-6,
            lr_max: 1e-2,
            kl_target: 0.001,
            kl_low: 0.5,
            kl_high: 2.0,
            lr_down: 0.5,
            lr_up: 1.5,
            eps_down: 0.9,
            eps_up: 1.1,
            epochs: 3,
            minibatch_episodes: 15,
            batch_episodes: 60,
            total_episodes: 60_000,
            normalize_advantages: true,
            optimizer: Optimizer::Adam,
            max_grad_norm: None,
            warmup_episodes: 60,
            obs_var_floor: 1e-6,
        }
    }
}

impl TrainerConfig {
    /// Landing-segment defaults: 120-episode batches over 300,000 episodes.
    pub fn landing() -> Self {
        Self {
            batch_episodes: 120,
            total_episodes: 300_000,
            minibatch_episodes: 30,
            warmup_episodes: 120,
            ..Self::default()
        }
    }
}

/// Running per-dimension mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub count: f64,
    pub var_floor: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize, var_floor: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0.0,
            var_floor,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count).max(self.var_floor)).collect()
    }

    /// Merge a block of row-major samples.
    pub fn update(&mut self, rows: &[f64]) {
        let d = self.dim();
        let n = (rows.len() / d) as f64;
        if n == 0.0 {
            return;
        }
        let mut mean = vec![0.0; d];
        for row in rows.chunks(d) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut m2 = vec![0.0; d];
        for row in rows.chunks(d) {
            for ((s, x), m) in m2.iter_mut().zip(row).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let total = self.count + n;
        for i in 0..d {
            let delta = mean[i] - self.mean[i];
            self.mean[i] += delta * n / total;
            self.m2[i] += m2[i] + delta * delta * self.count * n / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter().zip(&self.mean).zip(&var).map(|((x, m), v)| (x - m) / v.sqrt()).collect()
    }
}

/// Policy and value networks with their observation scalers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub segment: Segment,
    pub policy: Network,
    pub value: Network,
    pub policy_norm: ObsNormalizer,
    pub value_norm: ObsNormalizer,
}

pub fn obs_dims(segment: Segment) -> (usize, usize) {
    match segment {
        Segment::Guidance => (GUIDANCE_OBS_DIM, GUIDANCE_OBS_DIM),
        Segment::Landing => (LANDING_POLICY_OBS_DIM, LANDING_VALUE_OBS_DIM),
    }
}

impl Agent {
    pub fn new(segment: Segment, seed: u64, var_floor: f64) -> Self {
        let (po, vo) = obs_dims(segment);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            segment,
            policy: Network::init(NetworkSpec::policy(po, ACTION_DIM), &mut rng),
            value: Network::init(NetworkSpec::value(vo), &mut rng),
            policy_norm: ObsNormalizer::new(po, var_floor),
            value_norm: ObsNormalizer::new(vo, var_floor),
        }
    }

    /// Check that the networks fit the environment's observation layout.
    pub fn validate(&self) -> Result<(), TrainError> {
        let (po, vo) = obs_dims(self.segment);
        let expected = NetworkSpec::policy(po, ACTION_DIM);
        if self.policy.spec != expected || self.policy_norm.dim() != po {
            return Err(TrainError::Shape { expected, found: self.policy.spec });
        }
        let expected = NetworkSpec::value(vo);
        if self.value.spec != expected || self.value_norm.dim() != vo {
            return Err(TrainError::Shape { expected, found: self.value.spec });
        }
        Ok(())
    }

    /// Deterministic (mean) action.
    pub fn act_mean(&self, obs: &[f64], h: &mut [f64]) -> Vec<f64> {
        let o = self.policy_norm.normalize(obs);
        self.policy.step(&o, h).expect("observation layout checked at construction")
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let file = AgentFile {
            version: CHECKPOINT_VERSION,
            agent: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file: AgentFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(TrainError::Version(file.version));
        }
        file.agent.validate()?;
        Ok(file.agent)
    }

    pub fn load_for(path: &Path, segment: Segment) -> Result<Self, TrainError> {
        let a = Self::load(path)?;
        if a.segment != segment {
            return Err(TrainError::WrongSegment { expected: segment, found: a.segment });
        }
        Ok(a)
    }
}

#[derive(Serialize, Deserialize)]
struct AgentFile {
    version: u32,
    agent: Agent,
}

/// One complete episode collected under a frozen policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    /// Normalized policy observations, `len × obs_dim`.
    pub obs: Vec<f64>,
    pub value_obs: Vec<f64>,
    pub raw_obs: Vec<f64>,
    pub raw_value_obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub means: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal: TerminalState,
    pub retries: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
    pub log_std: Vec<f64>,
}

impl RolloutBatch {
    pub fn steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }
}

/// Where an episode starts.
#[derive(Debug, Clone)]
pub enum Start<'a> {
    Guidance,
    Landing(&'a LandingStart),
}

/// Run one episode, sampling actions from the policy.
pub fn run_episode(agent: &Agent, env_cfg: &EpisodeConfig, start: &Start, env_seed: u64, action_seed: u64) -> Episode {
    let mut env = Environment::new(env_cfg.clone());
    let mut r = match start {
        Start::Guidance => env.reset(env_seed, EpisodeMode::Guidance),
        Start::Landing(s) => env.reset_landing(env_seed, s),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let log_std = agent.policy.log_std();
    let mut hp = agent.policy.initial_hidden();
    let mut hv = agent.value.initial_hidden();
    let mut ep = Episode {
        seed: env_seed,
        obs: vec![],
        value_obs: vec![],
        raw_obs: vec![],
        raw_value_obs: vec![],
        actions: vec![],
        means: vec![],
        log_probs: vec![],
        rewards: vec![],
        values: vec![],
        terminal: env.terminal_state(),
        retries: 0,
    };
    while !r.done {
        let o = agent.policy_norm.normalize(&r.obs);
        let vo = agent.value_norm.normalize(&r.value_obs);
        let mean = agent.policy.step(&o, &mut hp).expect("policy input size");
        let v = agent.value.step(&vo, &mut hv).expect("value input size")[0];
        let a = sample_gaussian(&mean, &log_std, &mut rng);
        ep.log_probs.push(gaussian_log_prob(&mean, &log_std, &a));
        ep.raw_obs.extend_from_slice(&r.obs);
        ep.raw_value_obs.extend_from_slice(&r.value_obs);
        ep.obs.extend(o);
        ep.value_obs.extend(vo);
        ep.means.extend_from_slice(&mean);
        ep.values.push(v);
        r = env.step(&a);
        ep.actions.extend(a);
        ep.rewards.push(r.reward);
    }
    ep.terminal = env.terminal_state();
    ep
}

/// `G_k = Σ_{l≥k} γ^{l−k} r_l`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + gamma * acc;
        g[k] = acc;
    }
    g
}

/// `min(p·A, clip(p, 1−ϵ, 1+ϵ)·A)` and its derivative with respect to `p`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Mean-squared value loss `1/(2M) Σ (V − G)²`.
pub fn value_loss(values: &[f64], returns: &[f64]) -> f64 {
    let m = values.len() as f64;
    values.iter().zip(returns).map(|(v, g)| (v - g) * (v - g)).sum::<f64>() / (2.0 * m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoState {
    pub policy_lr: f64,
    pub value_lr: f64,
    pub clip_eps: f64,
}

/// Adjust the policy learning rate and clip range toward the KL target.
pub fn kl_servo(kl: f64, s: &mut ServoState, cfg: &TrainerConfig) {
    if kl > cfg.kl_high * cfg.kl_target {
        s.policy_lr = (s.policy_lr * cfg.lr_down).max(cfg.lr_min);
        s.clip_eps = (s.clip_eps * cfg.eps_down).max(cfg.clip_eps_min);
    } else if kl < cfg.kl_low * cfg.kl_target {
        s.policy_lr = (s.policy_lr * cfg.lr_up).min(cfg.lr_max);
        s.clip_eps = (s.clip_eps * cfg.eps_up).min(cfg.clip_eps_max);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

fn apply_step(opt: &mut Adam, kind: Optimizer, params: &mut [f64], grad: &mut [f64], lr: f64, max_norm: Option<f64>) {
    if let Some(limit) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > limit {
            grad.iter_mut().for_each(|g| *g *= limit / norm);
        }
    }
    match kind {
        Optimizer::Adam => opt.step(params, grad, lr),
        Optimizer::Sgd => params.iter_mut().zip(grad.iter()).for_each(|(p, g)| *p -= lr * g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub skipped: usize,
}

/// Per-episode policy gradient contribution of the clipped surrogate loss
/// `−(1/M) Σ min(p·A, clip(p)·A)`.
fn policy_grad(policy: &Network, ep: &Episode, adv: &[f64], log_std: &[f64], eps: f64, m: f64) -> Option<(Vec<f64>, f64, usize)> {
    let a_dim = policy.spec.out_dim;
    let cache = policy.forward_sequence(&ep.obs).ok()?;
    let mut d_out = vec![0.0; cache.outputs().len()];
    let mut d_log_std = vec![0.0; a_dim];
    let (mut obj, mut clipped) = (0.0, 0);
    for k in 0..ep.len() {
        let mean = &cache.outputs()[k * a_dim..(k + 1) * a_dim];
        let action = &ep.actions[k * a_dim..(k + 1) * a_dim];
        let lp = gaussian_log_prob(mean, log_std, action);
        let ratio = (lp - ep.log_probs[k]).exp();
        if !ratio.is_finite() {
            return None;
        }
        let (o, d_ratio) = clipped_surrogate(ratio, adv[k], eps);
        obj += o;
        if d_ratio == 0.0 && adv[k] != 0.0 {
            clipped += 1;
        }
        let d_lp = -d_ratio * ratio / m;
        if d_lp != 0.0 {
            let (dm, ds) = gaussian_log_prob_grad(mean, log_std, action);
            for i in 0..a_dim {
                d_out[k * a_dim + i] = d_lp * dm[i];
                d_log_std[i] += d_lp * ds[i];
            }
        }
    }
    let mut grad = vec![0.0; policy.params.len()];
    policy.backward_sequence(&cache, &d_out, &mut grad);
    policy.accumulate_log_std_grad(&d_log_std, &mut grad);
    Some((grad, obj, clipped))
}

fn value_grad(value: &Network, ep: &Episode, returns: &[f64], m: f64) -> (Vec<f64>, f64) {
    let cache = value.forward_sequence(&ep.value_obs).expect("value input size");
    let v = cache.outputs();
    let d: Vec<f64> = v.iter().zip(returns).map(|(v, g)| (v - g) / m).collect();
    let loss = v.iter().zip(returns).map(|(v, g)| (v - g) * (v - g)).sum::<f64>() / (2.0 * m);
    let mut grad = vec![0.0; value.params.len()];
    value.backward_sequence(&cache, &d, &mut grad);
    (grad, loss)
}

/// Mean per-step `KL(π_old ‖ π)` over a batch.
pub fn batch_kl(policy: &Network, batch: &RolloutBatch) -> f64 {
    let a_dim = policy.spec.out_dim;
    let log_std = policy.log_std();
    let (sum, n) = batch
        .episodes
        .par_iter()
        .map(|ep| {
            let cache = policy.forward_sequence(&ep.obs).expect("policy input size");
            let mut s = 0.0;
            for k in 0..ep.len() {
                let span = k * a_dim..(k + 1) * a_dim;
                s += gaussian_kl(&ep.means[span.clone()], &batch.log_std, &cache.outputs()[span], &log_std);
            }
            (s, ep.len())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0usize), |(a, b), (s, n)| (a + s, b + n));
    (sum / n.max(1) as f64).max(0.0)
}

/// One row of the learning curve, written once per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub batch: usize,
    pub episodes: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_min: f64,
    pub steps_mean: f64,
    pub steps_max: usize,
    pub miss_mean: f64,
    pub miss_std: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub kl: f64,
    pub policy_lr: f64,
    pub clip_eps: f64,
    pub value_loss: f64,
    pub retries: u64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn curve_row(batch: usize, episodes: usize, b: &RolloutBatch, stats: &UpdateStats, servo: &ServoState) -> CurveRow {
    let rewards: Vec<f64> = b.episodes.iter().map(Episode::total_reward).collect();
    let steps: Vec<f64> = b.episodes.iter().map(|e| e.len() as f64).collect();
    let miss: Vec<f64> = b.episodes.iter().map(|e| e.terminal.miss()).collect();
    let speed: Vec<f64> = b.episodes.iter().map(|e| e.terminal.speed()).collect();
    let (reward_mean, reward_std) = mean_std(&rewards);
    let (miss_mean, miss_std) = mean_std(&miss);
    let (speed_mean, speed_std) = mean_std(&speed);
    CurveRow {
        batch,
        episodes,
        reward_mean,
        reward_std,
        reward_min: rewards.iter().copied().fold(f64::INFINITY, f64::min),
        steps_mean: mean_std(&steps).0,
        steps_max: b.episodes.iter().map(Episode::len).max().unwrap_or(0),
        miss_mean,
        miss_std,
        speed_mean,
        speed_std,
        kl: stats.kl,
        policy_lr: servo.policy_lr,
        clip_eps: servo.clip_eps,
        value_loss: stats.value_loss,
        retries: b.episodes.iter().map(|e| e.retries).sum(),
    }
}

/// Complete trainer state; serializable so runs can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub env: EpisodeConfig,
    pub agent: Agent,
    pub adam_policy: Adam,
    pub adam_value: Adam,
    pub servo: ServoState,
    pub episodes: usize,
    pub batches: usize,
    pub warmed_up: bool,
    pub pool: Vec<LandingStart>,
}

impl Trainer {
    pub fn guidance(config: TrainerConfig, env: EpisodeConfig) -> Self {
        let agent = Agent::new(Segment::Guidance, config.seed, config.obs_var_floor);
        Self::with_agent(config, env, agent, vec![])
    }

    pub fn landing(config: TrainerConfig, env: EpisodeConfig, pool: Vec<LandingStart>) -> Result<Self, TrainError> {
        if pool.is_empty() {
            return Err(TrainError::EmptyPool);
        }
        let agent = Agent::new(Segment::Landing, config.seed, config.obs_var_floor);
        Ok(Self::with_agent(config, env, agent, pool))
    }

    fn with_agent(config: TrainerConfig, env: EpisodeConfig, agent: Agent, pool: Vec<LandingStart>) -> Self {
        Self {
            adam_policy: Adam::new(agent.policy.params.len()),
            adam_value: Adam::new(agent.value.params.len()),
            servo: ServoState {
                policy_lr: config.policy_lr,
                value_lr: config.value_lr,
                clip_eps: config.clip_eps,
            },
            episodes: 0,
            batches: 0,
            warmed_up: false,
            config,
            env,
            agent,
            pool,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let t: Trainer = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.agent.validate()?;
        Ok(t)
    }

    fn start_for(&self, index: u64) -> Start<'_> {
        match self.agent.segment {
            Segment::Guidance => Start::Guidance,
            Segment::Landing => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, STREAM_POOL_PICK, index));
                Start::Landing(&self.pool[rng.random_range(0..self.pool.len())])
            }
        }
    }

    fn episode(&self, stream: u64, index: u64) -> Result<Episode, TrainError> {
        let start = self.start_for(index);
        let mut env_seed = derive_seed(self.config.seed, stream, index);
        let action_seed = derive_seed(self.config.seed, STREAM_ACTION, index);
        for attempt in 0..MAX_RETRIES {
            let mut ep = run_episode(&self.agent, &self.env, &start, env_seed, action_seed);
            if !matches!(ep.terminal.termination, Termination::NonFinite(_)) {
                ep.retries = attempt;
                return Ok(ep);
            }
            warn!("episode {index} aborted ({:?}); resampling", ep.terminal.termination);
            env_seed = derive_seed(env_seed, STREAM_RETRY, attempt);
        }
        Err(TrainError::Unrecoverable { index })
    }

    /// Collect `n` episodes under the current (frozen) agent.
    pub fn collect(&self, first_index: u64, n: usize, stream: u64) -> Result<RolloutBatch, TrainError> {
        let episodes = (0..n as u64)
            .into_par_iter()
            .map(|i| self.episode(stream, first_index + i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RolloutBatch {
            episodes,
            log_std: self.agent.policy.log_std(),
        })
    }

    fn update_normalizers(&mut self, batch: &RolloutBatch) {
        for ep in &batch.episodes {
            self.agent.policy_norm.update(&ep.raw_obs);
            self.agent.value_norm.update(&ep.raw_value_obs);
        }
    }

    fn warm_up(&mut self) -> Result<(), TrainError> {
        if self.config.warmup_episodes > 0 {
            let b = self.collect(0, self.config.warmup_episodes, STREAM_WARMUP)?;
            self.update_normalizers(&b);
            info!("observation statistics seeded from {} warm-up episodes", b.episodes.len());
        }
        self.warmed_up = true;
        Ok(())
    }

    /// PPO update on one batch.
    pub fn update(&mut self, batch: &RolloutBatch) -> UpdateStats {
        let cfg = self.config.clone();
        let returns: Vec<Vec<f64>> = batch.episodes.iter().map(|e| discounted_returns(&e.rewards, cfg.gamma)).collect();
        let mut adv: Vec<Vec<f64>> = batch
            .episodes
            .iter()
            .zip(&returns)
            .map(|(e, g)| g.iter().zip(&e.values).map(|(g, v)| g - v).collect())
            .collect();
        if cfg.normalize_advantages {
            let flat: Vec<f64> = adv.iter().flatten().copied().collect();
            let (m, s) = mean_std(&flat);
            let s = s.max(1e-8);
            adv.iter_mut().flatten().for_each(|a| *a = (*a - m) / s);
        }

        let mut stats = UpdateStats::default();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, self.batches as u64));
        let mut order: Vec<usize> = (0..batch.episodes.len()).collect();
        let (mut obj_sum, mut vloss_sum, mut n_steps, mut n_clipped) = (0.0, 0.0, 0usize, 0usize);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch_episodes.max(1)) {
                let m = chunk.iter().map(|&i| batch.episodes[i].len()).sum::<usize>() as f64;
                if m == 0.0 {
                    continue;
                }
                let log_std = self.agent.policy.log_std();
                let policy = &self.agent.policy;
                let value = &self.agent.value;
                let parts: Vec<_> = chunk
                    .par_iter()
                    .map(|&i| {
                        let ep = &batch.episodes[i];
                        (
                            policy_grad(policy, ep, &adv[i], &log_std, self.servo.clip_eps, m),
                            value_grad(value, ep, &returns[i], m),
                        )
                    })
                    .collect();
                let mut gp = vec![0.0; policy.params.len()];
                let mut gv = vec![0.0; value.params.len()];
                let mut finite = true;
                for (p, (v, vl)) in parts {
                    match p {
                        Some((g, obj, clipped)) => {
                            gp.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                            obj_sum += obj;
                            n_clipped += clipped;
                        }
                        None => finite = false,
                    }
                    gv.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                    vloss_sum += vl * m;
                }
                n_steps += m as usize;
                if finite && gp.iter().all(|g| g.is_finite()) {
                    apply_step(&mut self.adam_policy, cfg.optimizer, &mut self.agent.policy.params, &mut gp, self.servo.policy_lr, cfg.max_grad_norm);
                } else {
                    stats.skipped += 1;
                    self.servo.policy_lr = (self.servo.policy_lr * cfg.lr_down).max(cfg.lr_min);
                    warn!("non-finite policy ratio or gradient; skipping step and lowering the learning rate");
                }
                if gv.iter().all(|g| g.is_finite()) {
                    apply_step(&mut self.adam_value, cfg.optimizer, &mut self.agent.value.params, &mut gv, self.servo.value_lr, cfg.max_grad_norm);
                }
            }
        }
        stats.surrogate = obj_sum / n_steps.max(1) as f64;
        stats.value_loss = vloss_sum / n_steps.max(1) as f64;
        stats.clip_fraction = n_clipped as f64 / n_steps.max(1) as f64;
        stats.kl = batch_kl(&self.agent.policy, batch);
        kl_servo(stats.kl, &mut self.servo, &cfg);
        stats
    }

    /// Train until the episode budget is spent; `on_batch` sees every curve
    /// row, the episodes behind it, and the trainer after its update.
    pub fn train(&mut self, mut on_batch: impl FnMut(&CurveRow, &RolloutBatch, &Trainer) -> Result<(), TrainError>) -> Result<Vec<CurveRow>, TrainError> {
        if !self.warmed_up {
            self.warm_up()?;
        }
        let mut rows = vec![];
        while self.episodes < self.config.total_episodes {
            let n = self.config.batch_episodes.min(self.config.total_episodes - self.episodes);
            let batch = self.collect(self.episodes as u64, n, STREAM_EPISODE)?;
            let stats = self.update(&batch);
            self.episodes += n;
            let row = curve_row(self.batches, self.episodes, &batch, &stats, &self.servo);
            self.batches += 1;
            if !row.reward_mean.is_finite() {
                return Err(TrainError::Diverged {
                    batch: row.batch,
                    reason: "non-finite mean reward".into(),
                });
            }
            if self.agent.policy.params.iter().chain(&self.agent.value.params).any(|p| !p.is_finite()) {
                return Err(TrainError::Diverged {
                    batch: row.batch,
                    reason: "non-finite network parameters".into(),
                });
            }
            self.update_normalizers(&batch);
            debug!(
                "batch {} episodes {} reward {:.2}±{:.2} steps {:.0} kl {:.2e} lr {:.2e} eps {:.3}",
                row.batch, row.episodes, row.reward_mean, row.reward_std, row.steps_mean, row.kl, row.policy_lr, row.clip_eps
            );
            on_batch(&row, &batch, self)?;
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Terminal states of the guidance policy (mean actions) that reach the
/// landing-segment boundary, for seeding landing training.
pub fn build_ic_pool(agent: &Agent, env_cfg: &EpisodeConfig, size: usize, seed: u64, max_episodes: usize) -> Result<Vec<LandingStart>, TrainError> {
    assert_eq!(agent.segment, Segment::Guidance);
    let mut pool = Vec::with_capacity(size);
    let mut next = 0u64;
    let chunk = 64u64;
    while pool.len() < size && (next as usize) < max_episodes {
        let found: Vec<Option<LandingStart>> = (next..next + chunk)
            .into_par_iter()
            .map(|i| {
                let mut env = Environment::new(env_cfg.clone());
                let mut r = env.reset(derive_seed(seed, STREAM_POOL_BUILD, i), EpisodeMode::Guidance);
                let mut h = agent.policy.initial_hidden();
                while !r.done {
                    let a = agent.act_mean(&r.obs, &mut h);
                    r = env.step(&a);
                }
                (r.info.termination == Some(Termination::SegmentEnd)).then(|| env.landing_start())
            })
            .collect();
        pool.extend(found.into_iter().flatten().take(size - pool.len()));
        next += chunk;
    }
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    if pool.len() < size {
        warn!("initial-condition pool has {} of {size} entries after {next} episodes", pool.len());
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_fixtures() {
        let g = discounted_returns(&[1.0, 1.0, 1.0], 0.99);
        assert!((g[0] - 2.9701).abs() < 1e-12);
        assert_eq!(discounted_returns(&[1.0; 7], 1.0)[0], 7.0);
        assert_eq!(discounted_returns(&[-3.5], 0.9), vec![-3.5]);
    }

    #[test]
    fn surrogate_fixtures() {
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).0, 1.2);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2).0, -0.8);
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), (0.7, 0.7));
        // clip engaged: no gradient
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).1, 0.0);
        // pessimistic side keeps the gradient
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2), (-1.5, -1.0));
    }

    #[test]
    fn value_loss_fixtures() {
        assert_eq!(value_loss(&[0.0], &[2.0]), 2.0);
        assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn servo_rules() {
        let cfg = TrainerConfig::default();
        let mut s = ServoState {
            policy_lr: 3e-4,
            value_lr: 1e-3,
            clip_eps: 0.2,
        };
        kl_servo(0.001, &mut s, &cfg);
        assert_eq!((s.policy_lr, s.clip_eps), (3e-4, 0.2));
        kl_servo(0.01, &mut s, &cfg);
        assert_eq!(s.policy_lr, 1.5e-4);
        assert!(s.clip_eps < 0.2);
        for _ in 0..100 {
            kl_servo(1.0, &mut s, &cfg);
        }
        assert_eq!(s.policy_lr, cfg.lr_min);
        assert_eq!(s.clip_eps, cfg.clip_eps_min);
        for _ in 0..100 {
            kl_servo(0.0, &mut s, &cfg);
        }
        assert_eq!(s.policy_lr, cfg.lr_max);
        assert_eq!(s.clip_eps, cfg.clip_eps_max);
        assert_eq!(s.value_lr, 1e-3);
    }

    #[test]
    fn normalizer_matches_two_pass_statistics() {
        let rows: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 * 0.3 - 4.0).collect();
        let mut n = ObsNormalizer::new(3, 1e-6);
        n.update(&rows[..90]);
        n.update(&rows[90..]);
        for d in 0..3 {
            let col: Vec<f64> = rows.iter().skip(d).step_by(3).copied().collect();
            let (m, s) = mean_std(&col);
            assert!((n.mean[d] - m).abs() < 1e-12);
            assert!((n.variance()[d] - s * s).abs() < 1e-9);
        }
        let mut c = ObsNormalizer::new(2, 1e-6);
        c.update(&[5.0, 1.0, 5.0, 1.0, 5.0, 1.0]);
        assert_eq!(c.variance(), vec![1e-6, 1e-6]);
        assert!(c.normalize(&[1e6, -1e6]).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut a = Adam::new(2);
        let mut p = vec![1.0, -1.0];
        a.step(&mut p, &[10.0, -0.01], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
