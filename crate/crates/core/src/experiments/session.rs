//! Synthetic ad-session studies: drift and iid comparisons against the
//! T-learner, the previous-action ablation and distillation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{train_offline, AgentConfig, Objective, TrainedAgent, Variant};
use crate::dataset::{collect, BehaviorPolicy, OfflineDataset};
use crate::distill::{distill_ablation, DistillReport, TreeParams};
use crate::env::{SessionEnv, SessionEnvConfig, PREV_ACTION_CHANNEL};
use crate::neural::OptimizerKind;
use crate::uplift::{
    evaluate_model, ObjectivePair, ScoreMode, TLearner, UpliftModel, DEFAULT_BUCKETS,
};
use crate::{seed, Error, Result};

/// How an agent turns its Q-values into uplift scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// Separate revenue and engagement agents; effects are their action gaps.
    #[default]
    PerObjective,
    /// One agent on `r_rev + alpha * r_eng`; combined mode only.
    Scalarized,
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::PerObjective => "per-objective",
            Scoring::Scalarized => "scalarized",
        })
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-objective" => Ok(Scoring::PerObjective),
            "scalarized" => Ok(Scoring::Scalarized),
            other => Err(Error::config(format!("unknown scoring `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionRecipe {
    pub env: SessionEnvConfig,
    pub n_samples: usize,
    /// Drift split: train on buckets below this, test on the rest.
    pub time_cut: u32,
    pub train_fraction: f64,
    pub agent: AgentConfig,
    pub tree: TreeParams,
    pub scoring: Scoring,
    pub mode: ScoreMode,
    pub n_buckets: usize,
}

impl Default for SessionRecipe {
    fn default() -> Self {
        Self {
            env: SessionEnvConfig {
                drift_amplitude: 1.0,
                ..SessionEnvConfig::default()
            },
            n_samples: 50_000,
            time_cut: 12,
            train_fraction: 0.7,
            agent: AgentConfig {
                gamma: 0.8,
                delta: 1e-4,
                lr: 1e-3,
                train_steps: 5_000,
                target_sync_every: 200,
                center_rewards: true,
                optimizer: OptimizerKind::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                ..AgentConfig::default()
            },
            tree: TreeParams::default(),
            scoring: Scoring::PerObjective,
            mode: ScoreMode::Combined,
            n_buckets: DEFAULT_BUCKETS,
        }
    }
}

impl SessionRecipe {
    pub fn alpha(&self) -> f64 {
        self.agent.alpha
    }
}

/// A uniform-random corpus from the session generator. The generator's
/// structure comes from `recipe.env.rng_seed`; `data_seed` drives sampling.
pub fn collect_session(recipe: &SessionRecipe, data_seed: u64) -> Result<OfflineDataset> {
    let mut env = SessionEnv::new(recipe.env)?;
    let mut rng = seed::rng_for(data_seed, "session-collect");
    collect(
        &mut env,
        &BehaviorPolicy::uniform(),
        recipe.n_samples,
        &mut rng,
    )
}

#[derive(Debug, Clone)]
pub struct SessionSplits {
    pub drift_train: OfflineDataset,
    pub drift_test: OfflineDataset,
    pub iid_train: OfflineDataset,
    pub iid_test: OfflineDataset,
}

impl SessionSplits {
    pub fn new(ds: &OfflineDataset, recipe: &SessionRecipe, data_seed: u64) -> Result<Self> {
        let (drift_train, drift_test) = ds.split_by_time(recipe.time_cut)?;
        let mut rng = seed::rng_for(data_seed, "session-split");
        let (iid_train, iid_test) = ds.split_random(recipe.train_fraction, &mut rng)?;
        Ok(Self {
            drift_train,
            drift_test,
            iid_train,
            iid_test,
        })
    }
}

/// A trained agent in whichever form its scoring needs.
#[derive(Debug, Clone)]
pub enum AgentModel {
    Pair(ObjectivePair),
    Scalar(TrainedAgent),
}

impl UpliftModel for AgentModel {
    fn score(&self, states: &[&[f64]], mode: ScoreMode, alpha: f64) -> Result<Vec<f64>> {
        match self {
            AgentModel::Pair(p) => p.score(states, mode, alpha),
            AgentModel::Scalar(a) => a.score(states, mode, alpha),
        }
    }
}

pub fn fit_agent_model(
    train: &OfflineDataset,
    cfg: &AgentConfig,
    variant: Variant,
    scoring: Scoring,
) -> Result<AgentModel> {
    match scoring {
        Scoring::Scalarized => {
            let cfg = AgentConfig {
                objective: Objective::Scalarized,
                ..cfg.clone()
            };
            Ok(AgentModel::Scalar(train_offline(train, &cfg, variant)?))
        }
        Scoring::PerObjective => {
            let with = |objective| AgentConfig {
                objective,
                ..cfg.clone()
            };
            let rev = train_offline(train, &with(Objective::Revenue), variant)?;
            let eng = train_offline(train, &with(Objective::Engagement), variant)?;
            Ok(AgentModel::Pair(ObjectivePair::new(rev, eng)?))
        }
    }
}

/// Test AUCCs for one data seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SessionComparison {
    pub drift_robust: f64,
    pub drift_dueling: f64,
    pub drift_tlearner: f64,
    pub iid_dqn: f64,
    pub iid_tlearner: f64,
}

fn agent_aucc(
    recipe: &SessionRecipe,
    train: &OfflineDataset,
    test: &OfflineDataset,
    variant: Variant,
    train_seed: u64,
) -> Result<f64> {
    let cfg = AgentConfig {
        seed: train_seed,
        ..recipe.agent.clone()
    };
    let model = fit_agent_model(train, &cfg, variant, recipe.scoring)?;
    Ok(evaluate_model(&model, test, recipe.mode, recipe.alpha(), recipe.n_buckets)?.aucc)
}

fn tlearner_aucc(
    recipe: &SessionRecipe,
    train: &OfflineDataset,
    test: &OfflineDataset,
) -> Result<f64> {
    let model = TLearner::fit(train, recipe.tree)?;
    Ok(evaluate_model(&model, test, recipe.mode, recipe.alpha(), recipe.n_buckets)?.aucc)
}

/// Robust dueling, dueling and T-learner on the drift split; DQN and
/// T-learner on the iid split.
pub fn session_comparison(
    recipe: &SessionRecipe,
    splits: &SessionSplits,
    train_seed: u64,
) -> Result<SessionComparison> {
    let (dtr, dte) = (&splits.drift_train, &splits.drift_test);
    let (itr, ite) = (&splits.iid_train, &splits.iid_test);
    let r = SessionComparison {
        drift_robust: agent_aucc(recipe, dtr, dte, Variant::RobustDueling, train_seed)?,
        drift_dueling: agent_aucc(recipe, dtr, dte, Variant::Dueling, train_seed)?,
        drift_tlearner: tlearner_aucc(recipe, dtr, dte)?,
        iid_dqn: agent_aucc(recipe, itr, ite, Variant::Dqn, train_seed)?,
        iid_tlearner: tlearner_aucc(recipe, itr, ite)?,
    };
    log::info!("session comparison seed {train_seed}: {r:?}");
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfoundingResult {
    pub with_channel: f64,
    pub without_channel: f64,
}

/// The iid-split agent with and without the previous-action inputs.
pub fn confounding_ablation(
    recipe: &SessionRecipe,
    splits: &SessionSplits,
    variant: Variant,
    train_seed: u64,
) -> Result<ConfoundingResult> {
    let with_channel = agent_aucc(
        recipe,
        &splits.iid_train,
        &splits.iid_test,
        variant,
        train_seed,
    )?;
    let train = splits.iid_train.with_zeroed_features(PREV_ACTION_CHANNEL)?;
    let test = splits.iid_test.with_zeroed_features(PREV_ACTION_CHANNEL)?;
    let without_channel = agent_aucc(recipe, &train, &test, variant, train_seed)?;
    let r = ConfoundingResult {
        with_channel,
        without_channel,
    };
    log::info!("confounding ablation seed {train_seed}: {r:?}");
    Ok(r)
}

/// Distills the iid-split agent of `variant` into a tree and compares it with
/// the teacher and the T-learner on the iid test split.
pub fn distill_study(
    recipe: &SessionRecipe,
    splits: &SessionSplits,
    variant: Variant,
    train_seed: u64,
) -> Result<DistillReport> {
    let cfg = AgentConfig {
        seed: train_seed,
        ..recipe.agent.clone()
    };
    let teacher = fit_agent_model(&splits.iid_train, &cfg, variant, recipe.scoring)?;
    let r = distill_ablation(
        &teacher,
        &splits.iid_train,
        &splits.iid_test,
        recipe.mode,
        recipe.alpha(),
        recipe.tree,
        recipe.n_buckets,
    )?;
    log::info!("distillation seed {train_seed}: {r:?}");
    Ok(r)
}
