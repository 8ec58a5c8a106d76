//! Experiment config files: sectioned TOML, unknown keys rejected.

use std::collections::BTreeMap;
use std::path::Path;

use adload_core::agents::{AgentConfig, OnlineConfig, Variant};
use adload_core::distill::TreeParams;
use adload_core::env::{CartPolePhysics, EnvKind, PerturbParam, SessionEnvConfig};
use adload_core::experiments::Scoring;
use adload_core::robust_linear::Thm1Config;
use adload_core::ScoreMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::pipeline::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    #[serde(default)]
    pub cartpole: CartPolePhysics,
    #[serde(default)]
    pub session: SessionEnvConfig,
    #[serde(default)]
    pub expert: OnlineConfig,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub theory: TheorySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub env: EnvKind,
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    /// Stages `all` runs; empty means the environment's default list.
    #[serde(default)]
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// Train on time buckets below `time_cut`.
    Time,
    /// Whole episodes at random, `train_fraction` of them to train.
    Random,
    /// Train and test on the full corpus.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_samples: usize,
    /// Exploration rate around the expert (cartpole only).
    pub epsilon: f64,
    pub split: SplitKind,
    pub time_cut: u32,
    pub train_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            epsilon: 0.3,
            split: SplitKind::None,
            time_cut: 12,
            train_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub scoring: Scoring,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Dueling, Variant::RobustDueling],
            seeds: vec![0],
            scoring: Scoring::PerObjective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mode: ScoreMode,
    pub n_buckets: usize,
    /// Also score a T-learner fitted on the training split.
    pub tlearner: bool,
    pub params: Vec<PerturbParam>,
    /// Per-parameter grid overrides; missing entries use the default grid.
    pub grids: BTreeMap<PerturbParam, Vec<f64>>,
    pub episodes: usize,
    pub env_seeds: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Combined,
            n_buckets: 100,
            tlearner: true,
            params: PerturbParam::ALL.to_vec(),
            grids: BTreeMap::new(),
            episodes: 30,
            env_seeds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    /// Variant whose first-seed agent serves as teacher.
    pub teacher: Variant,
    pub tree: TreeParams,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            teacher: Variant::Dqn,
            tree: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub prop1_instances: usize,
    pub prop2_pairs: usize,
    /// Radius as a fraction of the contraction bound.
    pub prop2_delta_fraction: f64,
    pub fqi_mdps: usize,
    pub fqi_deltas: Vec<f64>,
    pub thm1_states: usize,
    pub thm1_slip: f64,
    pub thm1_gamma: f64,
    pub thm1_delta: f64,
    pub thm1_n: Vec<usize>,
    pub thm1_t: Vec<usize>,
    pub thm1_seeds: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        let t = Thm1Config::default();
        Self {
            prop1_instances: 24,
            prop2_pairs: 100,
            prop2_delta_fraction: 0.5,
            fqi_mdps: 3,
            fqi_deltas: vec![0.0, 1e-2],
            thm1_states: t.n_states,
            thm1_slip: t.slip,
            thm1_gamma: t.gamma,
            thm1_delta: t.delta,
            thm1_n: t.n_list,
            thm1_t: t.t_list,
            thm1_seeds: t.seeds,
        }
    }
}

impl TheorySection {
    pub fn thm1(&self, root_seed: u64) -> Thm1Config {
        Thm1Config {
            n_states: self.thm1_states,
            slip: self.thm1_slip,
            gamma: self.thm1_gamma,
            delta: self.thm1_delta,
            n_list: self.thm1_n.clone(),
            t_list: self.thm1_t.clone(),
            seeds: self.thm1_seeds,
            root_seed,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The fully defaulted config, written beside every run's outputs.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.cartpole.validate()?;
        self.session.validate()?;
        self.agent.validate()?;
        self.distill.tree.validate()?;
        let d = &self.dataset;
        if d.n_samples == 0 {
            return Err(CliError::Config("dataset.n_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&d.epsilon) {
            return Err(CliError::Config("dataset.epsilon must lie in [0, 1]".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(CliError::Config("dataset.train_fraction must lie strictly between 0 and 1".into()));
        }
        if self.train.variants.is_empty() || self.train.seeds.is_empty() {
            return Err(CliError::Config("train.variants and train.seeds must be non-empty".into()));
        }
        let e = &self.eval;
        if e.n_buckets == 0 || e.episodes == 0 || e.env_seeds == 0 {
            return Err(CliError::Config("eval.n_buckets, eval.episodes and eval.env_seeds must be positive".into()));
        }
        for (param, grid) in &e.grids {
            let nominal = self.cartpole.get(*param);
            if !grid.contains(&nominal) {
                return Err(CliError::Config(format!("eval.grids.{param} must contain the nominal value {nominal}")));
            }
        }
        if self.run.env == EnvKind::Session && self.dataset.split == SplitKind::None {
            log::warn!("session run without a split evaluates on its training data");
        }
        if self.run.stages.contains(&Stage::All) {
            return Err(CliError::Config("run.stages cannot contain \"all\"".into()));
        }
        if self.train.scoring == Scoring::Scalarized && e.mode == ScoreMode::Sensitivity {
            return Err(CliError::Config("sensitivity mode needs train.scoring = \"per-objective\"".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[run]\nname = \"t\"\nenv = \"session\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.agent, AgentConfig::default());
        assert_eq!(cfg.eval.n_buckets, 100);
        assert_eq!(cfg.run.seed, 0);
    }

    #[test]
    fn resolved_snapshot_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.resolved_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}[agent]\ngama = 0.9\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(CliError::Config(_))));
        let text = format!("{MINIMAL}[bogus]\nx = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn negative_delta_rejected() {
        let text = format!("{MINIMAL}[agent]\ndelta = -0.1\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }

    #[test]
    fn bundled_configs_validate() {
        let bundled = [
            include_str!("../../../configs/cartpole-robustness.toml"),
            include_str!("../../../configs/session-aucc.toml"),
            include_str!("../../../configs/session-drift.toml"),
            include_str!("../../../configs/theory-suite.toml"),
            include_str!("../../../configs/distill-ablation.toml"),
        ];
        for text in bundled {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            assert!(!cfg.run.name.is_empty());
        }
    }

    #[test]
    fn grid_must_hold_nominal() {
        let text = format!("{MINIMAL}[eval.grids]\nforce_mag = [5.0, 15.0]\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("{MINIMAL}[eval.grids]\nforce_mag = [5.0, 10.0]\n");
        assert!(ExperimentConfig::from_toml(&text).is_ok());
    }
}
