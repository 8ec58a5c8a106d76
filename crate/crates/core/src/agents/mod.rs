//! Offline DQN, dueling DQN and the IPM-robust dueling DQN.

mod online;
mod targets;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::neural::{HeadKind, LrAnchor, OptimizerKind, RegMode};
use crate::{Error, Result};

pub use online::{train_online, OnlineConfig, OnlineReport};
pub use targets::{td_targets_dqn, td_targets_robust, Batch};
pub(crate) use trainer::greedy_return;
pub use trainer::{train_offline, TrainedAgent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dqn,
    Dueling,
    RobustDueling,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dqn, Variant::Dueling, Variant::RobustDueling];

    pub fn head(&self) -> HeadKind {
        match self {
            Variant::Dqn => HeadKind::Plain,
            Variant::Dueling | Variant::RobustDueling => HeadKind::Dueling,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Dqn => "dqn",
            Variant::Dueling => "dueling",
            Variant::RobustDueling => "robust-dueling",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

/// Which reward the agent is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// `r_rev + alpha * r_eng`.
    Scalarized,
    Revenue,
    Engagement,
}

impl Objective {
    /// `(revenue weight, engagement weight)`.
    pub fn weights(&self, alpha: f64) -> (f64, f64) {
        match self {
            Objective::Scalarized => (1.0, alpha),
            Objective::Revenue => (1.0, 0.0),
            Objective::Engagement => (0.0, 1.0),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalarized" => Ok(Objective::Scalarized),
            "revenue" => Ok(Objective::Revenue),
            "engagement" => Ok(Objective::Engagement),
            other => Err(Error::config(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Radius of the uncertainty set. Ignored by the non-robust variants.
    pub delta: f64,
    pub reg_mode: RegMode,
    /// Engagement weight in the scalarized reward.
    pub alpha: f64,
    pub objective: Objective,
    pub target_sync_every: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub lr_anchor: LrAnchor,
    pub lr_update_every: u64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    /// Global ℓ2 gradient-norm cap; `0` disables clipping.
    pub grad_clip: f64,
    /// Subtract the dataset mean from the scalarized reward before TD
    /// regression. Leaves action gaps unchanged when episode length does not
    /// depend on the action, and removes the termination noise a large
    /// reward offset puts into bootstrapped targets.
    pub center_rewards: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            delta: 1e-4,
            reg_mode: RegMode::AllButBias,
            alpha: 1.0,
            objective: Objective::Scalarized,
            target_sync_every: 100,
            batch_size: 64,
            train_steps: 10_000,
            seed: 0,
            lr: 1e-4,
            lr_anchor: LrAnchor::Initial,
            lr_update_every: 1,
            optimizer: OptimizerKind::Sgd,
            hidden: vec![64, 64],
            grad_clip: 10.0,
            center_rewards: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!(
                "delta must be finite and >= 0, got {}",
                self.delta
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be finite and > 0, got {}",
                self.alpha
            )));
        }
        if self.target_sync_every == 0 || self.batch_size == 0 || self.lr_update_every == 0 {
            return Err(Error::config(
                "target_sync_every, batch_size and lr_update_every must be positive",
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be >= 0"));
        }
        Ok(())
    }

    pub fn reward_weights(&self) -> (f64, f64) {
        self.objective.weights(self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("ppo".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let bad = [
            AgentConfig {
                delta: -1e-3,
                ..Default::default()
            },
            AgentConfig {
                gamma: 1.0,
                ..Default::default()
            },
            AgentConfig {
                alpha: 0.0,
                ..Default::default()
            },
            AgentConfig {
                batch_size: 0,
                ..Default::default()
            },
            AgentConfig {
                lr: f64::NAN,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn objective_weights() {
        assert_eq!(Objective::Scalarized.weights(0.5), (1.0, 0.5));
        assert_eq!(Objective::Revenue.weights(0.5), (1.0, 0.0));
        assert_eq!(Objective::Engagement.weights(0.5), (0.0, 1.0));
    }
}
