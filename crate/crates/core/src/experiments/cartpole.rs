//! CartPole: expert behaviour policy, offline corpus, greedy evaluation and
//! the perturbation robustness study.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{
    greedy_return, train_offline, train_online, AgentConfig, OnlineConfig, OnlineReport,
    TrainedAgent, Variant,
};
use crate::dataset::{collect, ActionValues, BehaviorPolicy, OfflineDataset};
use crate::env::{CartPole, CartPolePhysics, PerturbParam};
use crate::neural::OptimizerKind;
use crate::uplift::{default_grid, perturb_sweep, PerturbSweepResult};
use crate::{seed, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleRecipe {
    pub physics: CartPolePhysics,
    pub expert: OnlineConfig,
    pub n_samples: usize,
    pub epsilon: f64,
    pub collect_seed: u64,
    pub agent: AgentConfig,
}

impl Default for CartpoleRecipe {
    fn default() -> Self {
        Self {
            physics: CartPolePhysics::default(),
            expert: OnlineConfig::default(),
            n_samples: 100_000,
            epsilon: 0.3,
            collect_seed: 1,
            agent: AgentConfig {
                gamma: 0.99,
                delta: 1e-4,
                lr: 1e-4,
                batch_size: 128,
                train_steps: 100_000,
                target_sync_every: 2_000,
                optimizer: OptimizerKind::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                ..AgentConfig::default()
            },
        }
    }
}

/// Online DQN trained to competence on nominal physics.
pub fn train_expert(recipe: &CartpoleRecipe) -> Result<(TrainedAgent, OnlineReport)> {
    let mut env = CartPole::new(recipe.physics)?;
    let mut eval_env = CartPole::new(recipe.physics)?;
    train_online(&mut env, &mut eval_env, &recipe.expert)
}

/// `n_samples` transitions from the ε-greedy expert.
pub fn collect_cartpole(
    recipe: &CartpoleRecipe,
    expert: Arc<dyn ActionValues>,
) -> Result<OfflineDataset> {
    let mut env = CartPole::new(recipe.physics)?;
    let policy = BehaviorPolicy::epsilon_greedy(expert, recipe.epsilon);
    collect(
        &mut env,
        &policy,
        recipe.n_samples,
        &mut seed::rng_for(recipe.collect_seed, "cartpole-collect"),
    )
}

/// Greedy returns of `episodes` rollouts. Episode `i` uses the same stream
/// as rollout `i` of a perturbation sweep with the same `root_seed`.
pub fn evaluate_greedy(
    agent: &dyn ActionValues,
    physics: &CartPolePhysics,
    episodes: usize,
    root_seed: u64,
) -> Result<Vec<f64>> {
    let mut env = CartPole::new(*physics)?;
    (0..episodes as u64)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_indexed(root_seed, "perturb-sweep", i));
            greedy_return(agent, &mut env, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSweep {
    pub variant: Variant,
    pub train_seed: u64,
    pub result: PerturbSweepResult,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RobustnessStudy {
    pub sweeps: Vec<RobustnessSweep>,
}

impl RobustnessStudy {
    /// Mean return at `value` of `param`, averaged over training seeds.
    pub fn mean_at(&self, variant: Variant, param: PerturbParam, value: f64) -> Option<f64> {
        let xs: Vec<f64> = self
            .sweeps
            .iter()
            .filter(|s| s.variant == variant && s.result.param == param)
            .filter_map(|s| s.result.at(value).map(|p| p.mean))
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// `(nominal, harshest)` seed-averaged means for one variant and axis.
    pub fn nominal_and_harshest(
        &self,
        variant: Variant,
        param: PerturbParam,
    ) -> Option<(f64, f64)> {
        let first = self
            .sweeps
            .iter()
            .find(|s| s.variant == variant && s.result.param == param)?;
        let nominal = self.mean_at(variant, param, first.result.nominal)?;
        let harsh = self.mean_at(variant, param, first.result.harshest().param_value)?;
        Some((nominal, harsh))
    }
}

/// Trains each variant once per training seed on `ds` and sweeps all three
/// perturbation axes over their default grids.
pub fn robustness_study(
    recipe: &CartpoleRecipe,
    ds: &OfflineDataset,
    variants: &[Variant],
    train_seeds: &[u64],
    episodes: usize,
    env_seeds: usize,
    root_seed: u64,
) -> Result<RobustnessStudy> {
    let mut study = RobustnessStudy::default();
    for &train_seed in train_seeds {
        for &variant in variants {
            let cfg = AgentConfig {
                seed: train_seed,
                ..recipe.agent.clone()
            };
            let agent = train_offline(ds, &cfg, variant)?;
            for param in PerturbParam::ALL {
                let grid = default_grid(param, &recipe.physics);
                let result = perturb_sweep(
                    &agent,
                    &recipe.physics,
                    param,
                    &grid,
                    episodes,
                    env_seeds,
                    root_seed,
                )?;
                log::info!(
                    "{variant} seed {train_seed} {param}: {}",
                    result
                        .points
                        .iter()
                        .map(|p| format!("{:.1}", p.mean))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
                study.sweeps.push(RobustnessSweep {
                    variant,
                    train_seed,
                    result,
                });
            }
        }
    }
    Ok(study)
}
