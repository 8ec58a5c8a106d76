//! Treatment-effect ranking: scores, cost curves, the T-learner baseline and
//! perturbed-environment sweeps.

mod curve;
mod sweep;
mod tlearner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{Objective, TrainedAgent};
use crate::dataset::OfflineDataset;
use crate::env::ACTION_HIGH;
use crate::{Error, Result};

pub use curve::{cost_curve, write_curve_csv, CostCurve, CurvePoint, DEFAULT_BUCKETS};
pub use sweep::{default_grid, perturb_sweep, write_sweep_csv, PerturbSweepResult, SweepPoint};
pub use tlearner::TLearner;

/// Effects with `|Δeng|` below this count as zero in sensitivity mode.
pub const ENG_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `-Δrev / Δeng`
    Sensitivity,
    /// `Δrev + alpha * Δeng`
    #[default]
    Combined,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreMode::Sensitivity => f.write_str("sensitivity"),
            ScoreMode::Combined => f.write_str("combined"),
        }
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sensitivity" => Ok(ScoreMode::Sensitivity),
            "combined" => Ok(ScoreMode::Combined),
            other => Err(Error::config(format!("unknown score mode `{other}`"))),
        }
    }
}

/// Ranking score of one unit from its estimated effects.
///
/// In sensitivity mode a vanishing engagement effect ranks the unit first
/// (`+inf`) if it still gains revenue and last (`-inf`) otherwise.
pub fn score_from_effects(d_rev: f64, d_eng: f64, mode: ScoreMode, alpha: f64) -> f64 {
    match mode {
        ScoreMode::Combined => d_rev + alpha * d_eng,
        ScoreMode::Sensitivity if d_eng.abs() < ENG_ZERO_TOL => {
            if d_rev > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
        ScoreMode::Sensitivity => -d_rev / d_eng,
    }
}

/// A model that ranks states by predicted uplift of the high ad-load action.
pub trait UpliftModel {
    fn score(&self, states: &[&[f64]], mode: ScoreMode, alpha: f64) -> Result<Vec<f64>>;
}

/// Separate revenue-only and engagement-only agents; `Δ` for each objective
/// is that agent's `Q(s, high) - Q(s, low)`.
#[derive(Debug, Clone)]
pub struct ObjectivePair {
    pub revenue: TrainedAgent,
    pub engagement: TrainedAgent,
}

impl ObjectivePair {
    pub fn new(revenue: TrainedAgent, engagement: TrainedAgent) -> Result<Self> {
        if revenue.config.objective != Objective::Revenue
            || engagement.config.objective != Objective::Engagement
        {
            return Err(Error::config(
                "objective pair needs a revenue agent and an engagement agent",
            ));
        }
        if revenue.state_dim() != engagement.state_dim() {
            return Err(Error::Dimension {
                expected: revenue.state_dim(),
                got: engagement.state_dim(),
            });
        }
        Ok(Self {
            revenue,
            engagement,
        })
    }

    pub fn effects(&self, states: &[&[f64]]) -> Result<Vec<(f64, f64)>> {
        let rev = self.revenue.action_gaps(states.iter().copied())?;
        let eng = self.engagement.action_gaps(states.iter().copied())?;
        Ok(rev.into_iter().zip(eng).collect())
    }
}

impl UpliftModel for ObjectivePair {
    fn score(&self, states: &[&[f64]], mode: ScoreMode, alpha: f64) -> Result<Vec<f64>> {
        Ok(self
            .effects(states)?
            .into_iter()
            .map(|(r, e)| score_from_effects(r, e, mode, alpha))
            .collect())
    }
}

/// A scalarized agent ranks by `Q(s, high) - Q(s, low)`, which already
/// carries its training weight, so only combined mode with that same weight
/// is meaningful.
impl UpliftModel for TrainedAgent {
    fn score(&self, states: &[&[f64]], mode: ScoreMode, alpha: f64) -> Result<Vec<f64>> {
        if mode != ScoreMode::Combined {
            return Err(Error::config(
                "sensitivity scores need separate revenue and engagement effects; use an objective pair",
            ));
        }
        let (rev_w, eng_w) = self.config.reward_weights();
        if (eng_w - alpha * rev_w).abs() > 1e-12 {
            return Err(Error::config(format!(
                "agent was trained with reward weights ({rev_w}, {eng_w}), cannot score with alpha = {alpha}"
            )));
        }
        self.action_gaps(states.iter().copied())
    }
}

/// One evaluated unit: its score, randomized treatment flag and observed outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedUnit {
    pub unit_id: u64,
    pub score: f64,
    pub treated: bool,
    pub observed_rev: f64,
    pub observed_eng: f64,
}

/// One unit per transition: treated means the high ad-load action was
/// assigned, outcomes are the immediate rewards.
pub fn ranked_units(ds: &OfflineDataset, scores: &[f64]) -> Result<Vec<RankedUnit>> {
    if scores.len() != ds.len() {
        return Err(Error::Dimension {
            expected: ds.len(),
            got: scores.len(),
        });
    }
    Ok(ds
        .transitions()
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (t, &score))| RankedUnit {
            unit_id: i as u64,
            score,
            treated: t.action as usize == ACTION_HIGH,
            observed_rev: t.reward_rev,
            observed_eng: t.reward_eng,
        })
        .collect())
}

/// Scores every state in `ds` with `model` and builds its cost curve.
pub fn evaluate_model(
    model: &dyn UpliftModel,
    ds: &OfflineDataset,
    mode: ScoreMode,
    alpha: f64,
    n_buckets: usize,
) -> Result<CostCurve> {
    let states: Vec<&[f64]> = ds
        .transitions()
        .iter()
        .map(|t| t.state.as_slice())
        .collect();
    let scores = model.score(&states, mode, alpha)?;
    cost_curve(&ranked_units(ds, &scores)?, n_buckets)
}
