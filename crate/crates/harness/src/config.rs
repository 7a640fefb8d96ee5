//! Run-configuration file.
//!
//! Every table is optional; missing keys take their defaults and unknown keys
//! are rejected. A partial `[landing]` table is filled from the landing
//! defaults rather than the guidance ones.

use descent_rl::TrainerConfig;
use descent_sim::EpisodeConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub size: usize,
    /// Guidance episodes attempted before giving up on filling the pool.
    pub max_episodes: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            size: 5000,
            max_episodes: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episode: EpisodeConfig,
    pub guidance: TrainerConfig,
    pub landing: TrainerConfig,
    pub pool: PoolConfig,
    pub evaluation: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            guidance: TrainerConfig::default(),
            landing: TrainerConfig::landing(),
            pool: PoolConfig::default(),
            evaluation: EvalConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid run configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid run configuration: {0}")]
    Shape(String),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text.parse()?;
        if let Some(user) = root.remove("landing") {
            let toml::Value::Table(user) = user else {
                return Err(ConfigError::Shape("`landing` must be a table".into()));
            };
            let mut base = toml::Table::try_from(TrainerConfig::landing()).map_err(|e| ConfigError::Shape(e.to_string()))?;
            base.extend(user);
            root.insert("landing".into(), toml::Value::Table(base));
        }
        Ok(root.try_into()?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration is plain data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use descent_sim::Scenario;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_tables_keep_their_own_defaults() {
        let c = RunConfig::parse("[landing]\nseed = 4\n[episode]\nscenario = \"AF=0.7\"\n[episode.initial]\naltitude = [1000.0, 1200.0]\n").unwrap();
        assert_eq!(c.landing.seed, 4);
        assert_eq!(c.landing.batch_episodes, 120);
        assert_eq!(c.guidance.batch_episodes, 60);
        assert_eq!(c.episode.scenario, Scenario::ActuatorFailure(0.7));
        assert_eq!(c.episode.initial.altitude.max(), 1200.0);
        assert_eq!(c.episode.initial.downrange, EpisodeConfig::default().initial.downrange);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[guidance]\nlearning_rate = 1.0\n").is_err());
        assert!(RunConfig::parse("[landing]\nbogus = 1\n").is_err());
        assert!(RunConfig::parse("[nope]\n").is_err());
        assert!(RunConfig::parse("landing = 3\n").is_err());
    }

    #[test]
    fn written_config_reads_back() {
        let mut c = RunConfig::default();
        c.guidance.max_grad_norm = Some(0.5);
        c.episode.scenario = Scenario::InertiaVariation(30.0);
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
