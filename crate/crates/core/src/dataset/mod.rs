//! Offline transition corpora.

mod collect;
mod io;

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub(crate) use collect::argmax;
pub use collect::{collect, ActionValues, BasePolicy, BehaviorPolicy};
pub use io::{read_orld, write_csv, write_orld, ORLD_MAGIC, ORLD_VERSION};

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub episode_id: u64,
    pub step_index: u64,
    pub state: Vec<f64>,
    pub action: u32,
    pub reward_rev: f64,
    pub reward_eng: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub time_bucket: u32,
}

impl Transition {
    /// `r_rev + alpha * r_eng`.
    pub fn scalarized_reward(&self, rev_weight: f64, eng_weight: f64) -> f64 {
        rev_weight * self.reward_rev + eng_weight * self.reward_eng
    }
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation over `states`.
    pub fn fit<'a>(dim: usize, states: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for s in states {
            n += 1;
            for j in 0..dim {
                let delta = s[j] - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (s[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .map(|v| {
                if n > 0 {
                    (v / n as f64).sqrt().max(STD_FLOOR)
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Standardizes a batch of raw states into a `rows x dim` matrix.
    pub fn apply_batch<'a>(&self, states: impl ExactSizeIterator<Item = &'a [f64]>) -> Array2<f64> {
        let rows = states.len();
        let dim = self.dim();
        let mut out = Array2::zeros((rows, dim));
        for (i, s) in states.enumerate() {
            for j in 0..dim {
                out[[i, j]] = (s[j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Immutable offline replay corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
    state_dim: usize,
    n_actions: usize,
    normalization: Normalization,
}

impl OfflineDataset {
    /// Validates the records and fits normalization on them.
    pub fn new(transitions: Vec<Transition>, state_dim: usize, n_actions: usize) -> Result<Self> {
        if state_dim == 0 || n_actions == 0 {
            return Err(Error::contract("state_dim and n_actions must be positive"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != state_dim {
                return Err(Error::Dimension {
                    expected: state_dim,
                    got: t.state.len(),
                });
            }
            if t.next_state.len() != state_dim {
                return Err(Error::Dimension {
                    expected: state_dim,
                    got: t.next_state.len(),
                });
            }
            if t.action as usize >= n_actions {
                return Err(Error::contract(format!(
                    "record {i}: action {} >= {n_actions}",
                    t.action
                )));
            }
            if t.done {
                if let Some(next) = transitions.get(i + 1) {
                    if next.episode_id == t.episode_id {
                        return Err(Error::contract(format!(
                            "record {i}: done is set but episode {} continues",
                            t.episode_id
                        )));
                    }
                }
            }
        }
        let normalization =
            Normalization::fit(state_dim, transitions.iter().map(|t| t.state.as_slice()));
        Ok(Self {
            transitions,
            state_dim,
            n_actions,
            normalization,
        })
    }

    /// Replaces the normalization, e.g. with statistics fitted on a training split.
    pub fn with_normalization(mut self, normalization: Normalization) -> Result<Self> {
        if normalization.dim() != self.state_dim {
            return Err(Error::Dimension {
                expected: self.state_dim,
                got: normalization.dim(),
            });
        }
        self.normalization = normalization;
        Ok(self)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Contiguous index ranges, one per episode, in storage order.
    pub fn episodes(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.transitions.len() {
            if i == self.transitions.len()
                || self.transitions[i].episode_id != self.transitions[start].episode_id
            {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn episode_ids(&self) -> BTreeSet<u64> {
        self.transitions.iter().map(|t| t.episode_id).collect()
    }

    fn from_subset(&self, keep: impl Fn(&Transition) -> bool) -> Result<Self> {
        let ts: Vec<Transition> = self
            .transitions
            .iter()
            .filter(|t| keep(t))
            .cloned()
            .collect();
        Self::new(ts, self.state_dim, self.n_actions)
    }

    /// Train holds records with `time_bucket < cut_bucket`, test the rest.
    /// Both sides carry the training normalization.
    pub fn split_by_time(&self, cut_bucket: u32) -> Result<(Self, Self)> {
        let train = self.from_subset(|t| t.time_bucket < cut_bucket)?;
        let test = self.from_subset(|t| t.time_bucket >= cut_bucket)?;
        Self::finish_split(train, test)
    }

    /// Episode-level random split: `floor(fraction * n_episodes)` whole
    /// episodes go to train. Record order is preserved on both sides.
    pub fn split_random(&self, train_fraction: f64, rng: &mut dyn RngCore) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::config(
                "train_fraction must lie strictly between 0 and 1",
            ));
        }
        let mut ids: Vec<u64> = self.episode_ids().into_iter().collect();
        ids.shuffle(rng);
        let n_train = (train_fraction * ids.len() as f64).floor() as usize;
        let train_ids: BTreeSet<u64> = ids[..n_train].iter().copied().collect();
        let train = self.from_subset(|t| train_ids.contains(&t.episode_id))?;
        let test = self.from_subset(|t| !train_ids.contains(&t.episode_id))?;
        Self::finish_split(train, test)
    }

    fn finish_split(train: Self, test: Self) -> Result<(Self, Self)> {
        if train.is_empty() {
            return Err(Error::EmptySplit { side: "train" });
        }
        if test.is_empty() {
            return Err(Error::EmptySplit { side: "test" });
        }
        let norm = train.normalization.clone();
        let test = test.with_normalization(norm)?;
        Ok((train, test))
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        if batch_size > self.len() {
            return Err(Error::contract(format!(
                "batch size {batch_size} exceeds dataset size {}",
                self.len()
            )));
        }
        let n = self.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_batch(
        &self,
        batch_size: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.transitions[i])
            .collect())
    }

    /// Copy with the given feature columns set to zero in every state,
    /// e.g. to ablate an input channel.
    pub fn with_zeroed_features(&self, columns: Range<usize>) -> Result<Self> {
        let mut ts = self.transitions.clone();
        for t in ts.iter_mut() {
            for j in columns.clone() {
                t.state[j] = 0.0;
                t.next_state[j] = 0.0;
            }
        }
        let ds = Self::new(ts, self.state_dim, self.n_actions)?;
        let mut norm = self.normalization.clone();
        for j in columns {
            norm.mean[j] = 0.0;
            norm.std[j] = 1.0;
        }
        ds.with_normalization(norm)
    }
}
