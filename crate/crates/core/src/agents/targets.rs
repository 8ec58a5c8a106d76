use ndarray::Array2;

use crate::dataset::{Normalization, Transition};
use crate::neural::{QNetwork, RegMode};
use crate::{Error, Result};

/// A minibatch with standardized states and scalarized rewards.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(
        transitions: &[&Transition],
        norm: &Normalization,
        reward_weights: (f64, f64),
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let (w_rev, w_eng) = reward_weights;
        Ok(Self {
            states: norm.apply_batch(transitions.iter().map(|t| t.state.as_slice())),
            actions: transitions.iter().map(|t| t.action as usize).collect(),
            rewards: transitions
                .iter()
                .map(|t| t.scalarized_reward(w_rev, w_eng))
                .collect(),
            next_states: norm.apply_batch(transitions.iter().map(|t| t.next_state.as_slice())),
            dones: transitions.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `y = r + gamma * max_a Q_target(s', a)`, no bootstrap on terminal rows.
pub fn td_targets_dqn(batch: &Batch, target: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let q = target.forward(&batch.next_states)?.q;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(q.rows())
        .map(|((r, done), row)| {
            if *done {
                *r
            } else {
                r + gamma * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect())
}

/// `y = r + gamma * V_target(s') - gamma * delta * ||w_target||`; terminal
/// rows keep only `r`.
pub fn td_targets_robust(
    batch: &Batch,
    target: &QNetwork,
    gamma: f64,
    delta: f64,
    reg_mode: RegMode,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    if !(delta >= 0.0) {
        return Err(Error::config("delta must be >= 0"));
    }
    let penalty = gamma * delta * target.value_weight_norm(reg_mode)?;
    let v = target.forward(&batch.next_states)?.v;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(v.iter())
        .map(|((r, done), v)| if *done { *r } else { r + gamma * v - penalty })
        .collect())
}
