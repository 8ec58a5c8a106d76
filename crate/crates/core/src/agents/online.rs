use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::targets::{td_targets_dqn, Batch};
use super::trainer::{gradient_step, greedy_return, TrainedAgent};
use super::{AgentConfig, Objective, Variant};
use crate::dataset::{argmax, Normalization};
use crate::env::Environment;
use crate::neural::{OptimizerKind, QNetwork};
use crate::{seed, Error, Result};

/// Online DQN with experience replay, used to produce behaviour policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    pub total_steps: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub target_sync_every: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Training stops once an evaluation mean reaches this return.
    pub target_return: f64,
    pub hidden: Vec<usize>,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            total_steps: 60_000,
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 64,
            buffer_capacity: 50_000,
            learning_starts: 1_000,
            target_sync_every: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            eval_every: 2_500,
            eval_episodes: 10,
            target_return: 500.0,
            hidden: vec![64, 64],
            grad_clip: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineReport {
    /// `(env steps, mean greedy return)` per evaluation.
    pub evaluations: Vec<(usize, f64)>,
    pub best_return: f64,
}

const ADAM: OptimizerKind = OptimizerKind::Adam {
    beta1: 0.9,
    beta2: 0.999,
    eps: 1e-8,
};

struct Replay {
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    next_states: Vec<Vec<f64>>,
    dones: Vec<bool>,
    capacity: usize,
    head: usize,
}

impl Replay {
    fn new(capacity: usize) -> Self {
        Self {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            capacity,
            head: 0,
        }
    }

    fn len(&self) -> usize {
        self.actions.len()
    }

    fn push(&mut self, s: Vec<f64>, a: usize, r: f64, ns: Vec<f64>, done: bool) {
        if self.len() < self.capacity {
            self.states.push(s);
            self.actions.push(a);
            self.rewards.push(r);
            self.next_states.push(ns);
            self.dones.push(done);
        } else {
            let i = self.head;
            self.states[i] = s;
            self.actions[i] = a;
            self.rewards[i] = r;
            self.next_states[i] = ns;
            self.dones[i] = done;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Batch {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len())).collect();
        let d = self.states[0].len();
        let rows = |src: &Vec<Vec<f64>>| Array2::from_shape_fn((n, d), |(i, j)| src[idx[i]][j]);
        Batch {
            states: rows(&self.states),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: rows(&self.next_states),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }
}

fn wrap(net: QNetwork, cfg: &OnlineConfig) -> TrainedAgent {
    let d = net.input_dim();
    TrainedAgent {
        target: net.clone(),
        online: net,
        loss_trace: Vec::new(),
        config: AgentConfig {
            gamma: cfg.gamma,
            delta: 0.0,
            objective: Objective::Revenue,
            target_sync_every: cfg.target_sync_every,
            batch_size: cfg.batch_size,
            train_steps: cfg.total_steps,
            seed: cfg.seed,
            lr: cfg.lr,
            optimizer: ADAM,
            hidden: cfg.hidden.clone(),
            grad_clip: cfg.grad_clip,
            ..AgentConfig::default()
        },
        variant: Variant::Dqn,
        normalization: Normalization::identity(d),
    }
}

fn evaluate(
    net: &QNetwork,
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    struct Greedy<'a>(&'a QNetwork);
    impl crate::dataset::ActionValues for Greedy<'_> {
        fn action_values(&self, s: &[f64]) -> Vec<f64> {
            self.0.q_row(s).expect("dimension checked at construction")
        }
    }
    let mut total = 0.0;
    for _ in 0..episodes {
        total += greedy_return(&Greedy(net), env, rng)?;
    }
    Ok(total / episodes.max(1) as f64)
}

/// Trains a plain DQN by interacting with `env`, scoring greedy snapshots
/// on `eval_env`. Returns the best snapshot seen. Rewards are the revenue
/// channel of the environment.
pub fn train_online(
    env: &mut dyn Environment,
    eval_env: &mut dyn Environment,
    cfg: &OnlineConfig,
) -> Result<(TrainedAgent, OnlineReport)> {
    if cfg.batch_size == 0
        || cfg.buffer_capacity < cfg.batch_size
        || cfg.target_sync_every == 0
        || cfg.eval_every == 0
    {
        return Err(Error::config("invalid online DQN configuration"));
    }
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::config("gamma must lie in [0, 1)"));
    }
    let mut widths = vec![env.state_dim()];
    widths.extend(&cfg.hidden);
    let mut init_rng = seed::rng_for(cfg.seed, "online-init");
    let mut online = QNetwork::new(
        &widths,
        env.n_actions(),
        crate::neural::HeadKind::Plain,
        &mut init_rng,
    )?;
    let mut target = online.clone();
    let mut opt = crate::neural::Optimizer::new(ADAM, &online);
    let mut env_rng = seed::rng_for(cfg.seed, "online-env");
    let mut act_rng = seed::rng_for(cfg.seed, "online-act");
    let mut batch_rng = seed::rng_for(cfg.seed, "online-batches");
    let mut eval_rng_seed = seed::derive(cfg.seed, "online-eval");
    let mut replay = Replay::new(cfg.buffer_capacity);
    let mut best = (f64::NEG_INFINITY, online.clone());
    let mut evaluations = Vec::new();
    let mut state = env.reset(&mut env_rng);
    let mut updates = 0usize;
    for step in 0..cfg.total_steps {
        let frac = (step as f64 / cfg.epsilon_decay_steps.max(1) as f64).min(1.0);
        let eps = cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
        let action = if act_rng.random::<f64>() < eps {
            act_rng.random_range(0..env.n_actions())
        } else {
            argmax(&online.q_row(&state.features)?)
        };
        let out = env.step(action, &mut env_rng)?;
        let next = out.next_state.features.clone();
        replay.push(
            std::mem::take(&mut state.features),
            action,
            out.reward_rev,
            next,
            out.done && !env.truncated(),
        );
        state = if out.done {
            env.reset(&mut env_rng)
        } else {
            out.next_state
        };

        if replay.len() >= cfg.learning_starts.max(cfg.batch_size) {
            let batch = replay.sample(cfg.batch_size, &mut batch_rng);
            let y = td_targets_dqn(&batch, &target, cfg.gamma)?;
            gradient_step(
                &mut online,
                &mut opt,
                &batch,
                &y,
                cfg.lr,
                cfg.grad_clip,
                updates,
            )?;
            updates += 1;
            if updates % cfg.target_sync_every == 0 {
                target = online.clone();
            }
        }

        if (step + 1) % cfg.eval_every == 0 {
            let mut eval_rng = seed::rng(eval_rng_seed);
            eval_rng_seed = eval_rng_seed.wrapping_add(1);
            let mean = evaluate(&online, eval_env, cfg.eval_episodes, &mut eval_rng)?;
            log::info!("online dqn step {} eval return {mean:.1}", step + 1);
            evaluations.push((step + 1, mean));
            if mean > best.0 {
                best = (mean, online.clone());
            }
            if mean >= cfg.target_return {
                break;
            }
        }
    }
    if best.0 == f64::NEG_INFINITY {
        best.1 = online;
    }
    let report = OnlineReport {
        evaluations,
        best_return: best.0,
    };
    Ok((wrap(best.1, cfg), report))
}
