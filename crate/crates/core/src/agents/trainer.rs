use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::targets::{td_targets_dqn, td_targets_robust, Batch};
use super::{AgentConfig, Variant};
use crate::dataset::{ActionValues, Normalization, OfflineDataset};
use crate::env::{ACTION_HIGH, ACTION_LOW};
use crate::neural::{read_orlw, write_orlw, LrSchedule, Optimizer, QNetwork};
use crate::{seed, Error, Result};

/// An offline-trained agent together with everything needed to query it on
/// raw states.
#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    pub loss_trace: Vec<f64>,
    pub config: AgentConfig,
    pub variant: Variant,
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
struct AgentMeta {
    variant: Variant,
    config: AgentConfig,
}

/// Freshly initialised network for a config, identical to the one
/// `train_offline` starts from.
pub fn initial_network(
    cfg: &AgentConfig,
    variant: Variant,
    state_dim: usize,
    n_actions: usize,
) -> Result<QNetwork> {
    let mut widths = vec![state_dim];
    widths.extend(&cfg.hidden);
    let mut rng = seed::rng_for(cfg.seed, "agent-init");
    QNetwork::new(&widths, n_actions, variant.head(), &mut rng)
}

/// Standardized copy of a dataset, laid out for fast minibatch gathers.
struct Prepared {
    states: Array2<f64>,
    next_states: Array2<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl Prepared {
    fn new(ds: &OfflineDataset, weights: (f64, f64), center: bool) -> Self {
        let norm = ds.normalization();
        let ts = ds.transitions();
        let mut rewards: Vec<f64> = ts
            .iter()
            .map(|t| t.scalarized_reward(weights.0, weights.1))
            .collect();
        if center && !rewards.is_empty() {
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            rewards.iter_mut().for_each(|r| *r -= mean);
        }
        Self {
            states: norm.apply_batch(ts.iter().map(|t| t.state.as_slice())),
            next_states: norm.apply_batch(ts.iter().map(|t| t.next_state.as_slice())),
            actions: ts.iter().map(|t| t.action as usize).collect(),
            rewards,
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            states: self.states.select(Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: self.next_states.select(Axis(0), idx),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }
}

/// Mean squared TD error on the taken actions and its gradient w.r.t. Q.
pub(crate) fn td_loss(q: &Array2<f64>, actions: &[usize], targets: &[f64]) -> (f64, Array2<f64>) {
    let n = actions.len() as f64;
    let mut d_q = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let err = q[[i, a]] - y;
        loss += err * err;
        d_q[[i, a]] = 2.0 * err / n;
    }
    (loss / n, d_q)
}

/// One gradient step of `online` towards `targets`; returns the loss.
pub(crate) fn gradient_step(
    online: &mut QNetwork,
    opt: &mut Optimizer,
    batch: &Batch,
    targets: &[f64],
    lr: f64,
    grad_clip: f64,
    step: usize,
) -> Result<f64> {
    let (out, cache) = online.forward_cached(&batch.states)?;
    let (loss, d_q) = td_loss(&out.q, &batch.actions, targets);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
            step,
        });
    }
    let mut grads = online.backward(&cache, &d_q)?;
    if grad_clip > 0.0 {
        grads.clip_global_norm(grad_clip);
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient".into(),
            step,
        });
    }
    opt.step(online, &grads, lr);
    Ok(loss)
}

/// Trains on a fixed dataset with minibatch TD regression and a periodically
/// synchronised target network.
pub fn train_offline(
    ds: &OfflineDataset,
    cfg: &AgentConfig,
    variant: Variant,
) -> Result<TrainedAgent> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let mut online = initial_network(cfg, variant, ds.state_dim(), ds.n_actions())?;
    let mut target = online.clone();
    let data = Prepared::new(ds, cfg.reward_weights(), cfg.center_rewards);
    let mut batch_rng = seed::rng_for(cfg.seed, "agent-batches");
    let mut opt = Optimizer::new(cfg.optimizer, &online);
    let mut sched = LrSchedule::new(
        cfg.lr,
        cfg.train_steps.max(1) as u64,
        cfg.lr_anchor,
        cfg.lr_update_every,
    )?;
    let mut loss_trace = Vec::with_capacity(cfg.train_steps);
    let batch_size = cfg.batch_size.min(ds.len());
    for step in 0..cfg.train_steps {
        let idx = ds.sample_indices(batch_size, &mut batch_rng)?;
        let batch = data.gather(&idx);
        let targets = match variant {
            Variant::Dqn | Variant::Dueling => td_targets_dqn(&batch, &target, cfg.gamma)?,
            Variant::RobustDueling => {
                td_targets_robust(&batch, &target, cfg.gamma, cfg.delta, cfg.reg_mode)?
            }
        };
        let lr = sched.rate_for_step(step as u64);
        let loss = gradient_step(
            &mut online,
            &mut opt,
            &batch,
            &targets,
            lr,
            cfg.grad_clip,
            step,
        )?;
        loss_trace.push(loss);
        if (step + 1) % cfg.target_sync_every == 0 {
            target = online.clone();
        }
        if (step + 1) % 5000 == 0 {
            log::debug!("{variant} step {} loss {loss:.5} lr {lr:.2e}", step + 1);
        }
    }
    Ok(TrainedAgent {
        online,
        target,
        loss_trace,
        config: cfg.clone(),
        variant,
        normalization: ds.normalization().clone(),
    })
}

impl TrainedAgent {
    pub fn state_dim(&self) -> usize {
        self.online.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.online.n_actions()
    }

    /// Q-values for raw (unstandardized) states, one row per state.
    pub fn q_values<'a>(
        &self,
        states: impl ExactSizeIterator<Item = &'a [f64]>,
    ) -> Result<Array2<f64>> {
        let x = self.normalization.apply_batch(states);
        Ok(self.online.forward(&x)?.q)
    }

    pub fn q_row(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.q_row(&self.normalization.apply(state))
    }

    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(crate::dataset::argmax(&self.q_row(state)?))
    }

    /// `Q(s, high) - Q(s, low)` per state.
    pub fn action_gaps<'a>(
        &self,
        states: impl ExactSizeIterator<Item = &'a [f64]>,
    ) -> Result<Vec<f64>> {
        if self.n_actions() <= ACTION_HIGH {
            return Err(Error::contract("agent has no high ad-load action"));
        }
        let q = self.q_values(states)?;
        Ok(q.rows()
            .into_iter()
            .map(|r| r[ACTION_HIGH] - r[ACTION_LOW])
            .collect())
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::to_string(&AgentMeta {
            variant: self.variant,
            config: self.config.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        write_orlw(w, &self.online, Some(&self.normalization), &meta)
    }

    /// Restores an agent; the target network is set to the online one and
    /// the loss trace is not stored.
    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (online, norm, meta) = read_orlw(r)?;
        let meta: AgentMeta = serde_json::from_str(&meta)
            .map_err(|e| Error::Format(format!("agent metadata: {e}")))?;
        let normalization = norm.unwrap_or_else(|| Normalization::identity(online.input_dim()));
        Ok(Self {
            target: online.clone(),
            online,
            loss_trace: Vec::new(),
            config: meta.config,
            variant: meta.variant,
            normalization,
        })
    }
}

impl ActionValues for TrainedAgent {
    fn action_values(&self, state: &[f64]) -> Vec<f64> {
        self.q_row(state)
            .expect("state dimension matches the agent")
    }
}

/// Greedy rollout return of an agent, capped by the environment's horizon.
pub(crate) fn greedy_return(
    agent: &dyn ActionValues,
    env: &mut dyn crate::env::Environment,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut state = env.reset(rng);
    let mut total = 0.0;
    loop {
        let a = crate::dataset::argmax(&agent.action_values(&state.features));
        let out = env.step(a, rng)?;
        total += out.reward_rev;
        if out.done {
            return Ok(total);
        }
        state = out.next_state;
    }
}
