use descent_rl::networks::gaussian_log_prob;
use descent_rl::ppo::{build_ic_pool, discounted_returns, Agent, Trainer, TrainerConfig};
use descent_sim::env::Segment;
use descent_sim::EpisodeConfig;

fn quick_config() -> TrainerConfig {
    TrainerConfig {
        seed: 21,
        batch_episodes: 6,
        minibatch_episodes: 3,
        total_episodes: 12,
        warmup_episodes: 4,
        ..TrainerConfig::default()
    }
}

#[test]
fn stored_log_probs_give_unit_ratio_before_update() {
    let t = Trainer::guidance(quick_config(), EpisodeConfig::default());
    let batch = t.collect(0, 4, 1).unwrap();
    let ls = t.agent.policy.log_std();
    for ep in &batch.episodes {
        assert!(!ep.is_empty());
        let c = t.agent.policy.forward_sequence(&ep.obs).unwrap();
        for k in 0..ep.len() {
            let lp = gaussian_log_prob(&c.outputs()[k * 4..(k + 1) * 4], &ls, &ep.actions[k * 4..(k + 1) * 4]);
            assert!(((lp - ep.log_probs[k]).exp() - 1.0).abs() < 1e-12);
        }
        let g = discounted_returns(&ep.rewards, 0.995);
        assert!((g[0] - ep.rewards.iter().rev().fold(0.0, |acc, r| r + 0.995 * acc)).abs() < 1e-9);
    }
}

#[test]
fn training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = Trainer::guidance(quick_config(), EpisodeConfig::default());
    let rows_a = a.train(|_, _, _| Ok(())).unwrap();
    assert_eq!(rows_a.len(), 2);
    assert!(rows_a.iter().all(|r| r.kl.is_finite() && r.kl >= 0.0));

    // stop after the first batch, save, reload, and finish
    let mut b = Trainer::guidance(TrainerConfig { total_episodes: 6, ..quick_config() }, EpisodeConfig::default());
    let first = b.train(|_, _, _| Ok(())).unwrap();
    let path = dir.path().join("state.json");
    b.save(&path).unwrap();
    let mut c = Trainer::load(&path).unwrap();
    assert_eq!(c, b);
    c.config.total_episodes = 12;
    let second = c.train(|_, _, _| Ok(())).unwrap();
    assert_eq!(first[0], rows_a[0]);
    assert_eq!(second[0], rows_a[1]);
    a.config.total_episodes = 12;
    assert_eq!(a.agent, c.agent);
}

#[test]
fn agent_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let agent = Agent::new(Segment::Landing, 3, 1e-6);
    let path = dir.path().join("landing.json");
    agent.save(&path).unwrap();
    assert_eq!(Agent::load_for(&path, Segment::Landing).unwrap(), agent);
    assert!(Agent::load_for(&path, Segment::Guidance).is_err());
    assert!(Agent::load(&dir.path().join("missing.json")).is_err());
}

#[test]
fn landing_training_runs_from_a_pool() {
    let mut env = EpisodeConfig::default();
    // start close enough that an untrained policy still reaches the boundary
    env.initial.downrange = descent_sim::Bounds(5.0, 10.0);
    env.initial.crossrange = descent_sim::Bounds(-3.0, 3.0);
    env.initial.altitude = descent_sim::Bounds(20.0, 30.0);
    env.initial.speed = descent_sim::Bounds(4.0, 6.0);
    env.divert_thresholds.clear();
    let guidance = Agent::new(Segment::Guidance, 5, 1e-6);
    let pool = build_ic_pool(&guidance, &env, 8, 2, 2000).unwrap();
    assert!(pool.iter().all(|s| s.r_lt[2] < 5.0));
    let mut t = Trainer::landing(TrainerConfig { total_episodes: 8, batch_episodes: 4, minibatch_episodes: 2, ..quick_config() }, env, pool).unwrap();
    let rows = t.train(|_, _, _| Ok(())).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.reward_mean.is_finite()));
}
