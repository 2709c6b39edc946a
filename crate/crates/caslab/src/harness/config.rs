use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campus::{RuleTable, TaskMode};
use crate::cas::{CostWeights, HumanCost, KappaRule, Signal, SwitchCost};
use crate::feedback::Estimator;

/// How tasks are drawn across episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Random,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Mode::Fixed),
            "random" => Ok(Mode::Random),
            other => Err(format!("unknown mode {other:?}; expected fixed or random")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Map file; the bundled campus when absent. Relative paths resolve against the config file.
    pub map: Option<PathBuf>,
    pub mode: Mode,
    /// Rooms used in fixed mode.
    pub start: String,
    pub goal: String,
    pub episodes: usize,
    pub trials: usize,
    /// Whether the active feature space may grow (the modified system).
    pub refinement: bool,
    pub theta: f64,
    pub m: usize,
    pub k: usize,
    pub alpha: f64,
    pub split_ratio: f64,
    pub epsilon: f64,
    pub max_cardinality: usize,
    pub escalate: f64,
    pub demote: f64,
    pub horizon: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub weights: CostWeights,
    pub mu: SwitchCost,
    pub rho: HumanCost,
    pub rules: RuleTable,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            map: None,
            mode: Mode::Random,
            start: "archive".into(),
            goal: "south-a".into(),
            episodes: 300,
            trials: 10,
            refinement: true,
            theta: 0.95,
            m: 30,
            k: 1,
            alpha: 0.05,
            split_ratio: 0.75,
            epsilon: 0.05,
            max_cardinality: 2,
            escalate: 0.9,
            demote: 0.9,
            horizon: 500,
            seed: 0,
            estimator: Estimator::FrequencyTable,
            weights: CostWeights::default(),
            mu: SwitchCost::default(),
            rho: HumanCost::default(),
            rules: RuleTable::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `map` is taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(map), Some(dir)) = (&cfg.map, path.parent()) {
            if map.is_relative() {
                cfg.map = Some(dir.join(map));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let lower = 1.0 / Signal::ALL.len() as f64;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.theta > lower && self.theta <= 1.0 - self.epsilon) {
            return bad(format!("theta {} outside ({lower}, 1 - epsilon]", self.theta));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.m == 0 || self.k == 0 || self.max_cardinality == 0 || self.horizon == 0 {
            return bad("m, k, max_cardinality and horizon must be positive".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} outside (0, 1)", self.split_ratio));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        for (name, t) in [("escalate", self.escalate), ("demote", self.demote)] {
            if !(t > 0.5 && t <= 1.0) {
                return bad(format!("{name} threshold {t} outside (0.5, 1]"));
            }
        }
        let costs = [
            self.weights.domain,
            self.weights.autonomy,
            self.weights.human,
            self.mu.same,
            self.mu.switch,
            self.rho.override_cost,
        ];
        if costs.iter().chain(&self.rho.per_level).any(|c| *c < 0.0 || !c.is_finite()) {
            return bad("weights and costs must be finite and non-negative".into());
        }
        if self.mode == Mode::Fixed && self.start == self.goal {
            return bad(format!("fixed start and goal are both {:?}", self.start));
        }
        Ok(())
    }

    pub fn task_mode(&self) -> TaskMode {
        match self.mode {
            Mode::Fixed => TaskMode::Fixed { start: self.start.clone(), goal: self.goal.clone() },
            Mode::Random => TaskMode::Random,
        }
    }

    pub fn kappa_rule(&self) -> KappaRule {
        KappaRule { min_visits: self.m, escalate: self.escalate, demote: self.demote }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig { mode: Mode::Fixed, episodes: 12, refinement: false, ..Default::default() };
        cfg.rules.door_l1.0.remove("mechanism");
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn nested_tables_override() {
        let cfg = ExperimentConfig::from_toml(
            "mode = \"fixed\"\ntrials = 2\n[rho]\nper_level = [5.0, 2.0, 1.0, 0.0]\noverride_cost = 3.0\n[rules.door_l2]\nsize = [\"light\", \"medium\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Fixed);
        assert_eq!(cfg.rho.per_level[0], 5.0);
        assert_eq!(cfg.rules.door_l2.0["size"], vec!["light", "medium"]);
        assert!(!cfg.rules.door_l2.0.contains_key("mechanism"));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("trials = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml("theta = 0.99"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::from_toml("tirals = 3"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("mode = \"fixed\"\nstart = \"a\"\ngoal = \"a\""),
            Err(ConfigError::Invalid(_))
        ));
    }
}
