use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{OfflineDataset, Transition};
use crate::env::Environment;
use crate::{Error, Result};

/// Anything that scores actions for a raw (unstandardized) state.
pub trait ActionValues: Send + Sync {
    fn action_values(&self, state: &[f64]) -> Vec<f64>;
}

#[derive(Clone)]
pub enum BasePolicy {
    Uniform,
    Greedy(Arc<dyn ActionValues>),
}

impl std::fmt::Debug for BasePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasePolicy::Uniform => f.write_str("Uniform"),
            BasePolicy::Greedy(_) => f.write_str("Greedy(..)"),
        }
    }
}

/// `(1 - epsilon) * base + epsilon * uniform`.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    pub base: BasePolicy,
    pub epsilon: f64,
}

impl BehaviorPolicy {
    pub fn uniform() -> Self {
        Self {
            base: BasePolicy::Uniform,
            epsilon: 1.0,
        }
    }

    pub fn epsilon_greedy(values: Arc<dyn ActionValues>, epsilon: f64) -> Self {
        Self {
            base: BasePolicy::Greedy(values),
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn act(&self, state: &[f64], n_actions: usize, rng: &mut dyn RngCore) -> usize {
        let explore = rng.random::<f64>() < self.epsilon;
        match (&self.base, explore) {
            (BasePolicy::Greedy(q), false) => argmax(&q.action_values(state)),
            _ => rng.random_range(0..n_actions),
        }
    }
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Rolls out `policy` until exactly `n_samples` transitions are recorded.
/// Episodes are stored contiguously; the last one may be cut short.
pub fn collect(
    env: &mut dyn Environment,
    policy: &BehaviorPolicy,
    n_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<OfflineDataset> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be >= 1"));
    }
    policy.validate()?;
    let n_actions = env.n_actions();
    let mut out: Vec<Transition> = Vec::with_capacity(n_samples);
    let mut episode_id = 0u64;
    'episodes: loop {
        let mut state = env.reset(rng);
        let time_bucket = env.time_bucket();
        let mut step_index = 0u64;
        loop {
            let action = policy.act(&state.features, n_actions, rng);
            let outcome = env
                .step(action, rng)
                .map_err(|e| Error::PartialCollection {
                    collected: out.len(),
                    requested: n_samples,
                    reason: e.to_string(),
                })?;
            if !(outcome.reward_rev.is_finite() && outcome.reward_eng.is_finite()) {
                return Err(Error::PartialCollection {
                    collected: out.len(),
                    requested: n_samples,
                    reason: "environment produced a non-finite reward".into(),
                });
            }
            out.push(Transition {
                episode_id,
                step_index,
                state: std::mem::take(&mut state.features),
                action: action as u32,
                reward_rev: outcome.reward_rev,
                reward_eng: outcome.reward_eng,
                next_state: outcome.next_state.features.clone(),
                done: outcome.done && !env.truncated(),
                time_bucket,
            });
            if out.len() == n_samples {
                break 'episodes;
            }
            if outcome.done {
                break;
            }
            state = outcome.next_state;
            step_index += 1;
        }
        episode_id += 1;
    }
    OfflineDataset::new(out, env.state_dim(), n_actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CartPole, CartPolePhysics, SessionEnv, SessionEnvConfig};
    use crate::seed;

    struct AlwaysRight;

    impl ActionValues for AlwaysRight {
        fn action_values(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0, 1.0]
        }
    }

    #[test]
    fn uniform_policy_is_balanced() {
        let mut env = CartPole::new(CartPolePhysics::default()).unwrap();
        let ds = collect(
            &mut env,
            &BehaviorPolicy::uniform(),
            10_000,
            &mut seed::rng(0),
        )
        .unwrap();
        assert_eq!(ds.len(), 10_000);
        let ones = ds.transitions().iter().filter(|t| t.action == 1).count() as f64;
        let sigma = (1e4f64 * 0.25).sqrt();
        assert!((ones - 5000.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn epsilon_mixes_base_and_uniform() {
        let mut env = CartPole::new(CartPolePhysics::default()).unwrap();
        let policy = BehaviorPolicy::epsilon_greedy(Arc::new(AlwaysRight), 0.3);
        let ds = collect(&mut env, &policy, 20_000, &mut seed::rng(1)).unwrap();
        // P(action = 1) = 0.7 + 0.3 / 2
        let p = ds.transitions().iter().filter(|t| t.action == 1).count() as f64 / 2e4;
        let sigma = (0.85f64 * 0.15 / 2e4).sqrt();
        assert!((p - 0.85).abs() < 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn episodes_are_contiguous_and_terminated() {
        let mut env = SessionEnv::new(SessionEnvConfig::default()).unwrap();
        let ds = collect(
            &mut env,
            &BehaviorPolicy::uniform(),
            2_000,
            &mut seed::rng(2),
        )
        .unwrap();
        let eps = ds.episodes();
        assert_eq!(eps.len(), ds.episode_ids().len());
        for r in &eps[..eps.len() - 1] {
            let last = &ds.transitions()[r.end - 1];
            assert!(last.done);
            for (k, i) in r.clone().enumerate() {
                assert_eq!(ds.transitions()[i].step_index, k as u64);
                let tb = ds.transitions()[r.start].time_bucket;
                assert_eq!(ds.transitions()[i].time_bucket, tb);
            }
        }
        // consecutive records chain next_state -> state within an episode
        for r in &eps {
            for i in r.start..r.end - 1 {
                assert_eq!(
                    ds.transitions()[i].next_state,
                    ds.transitions()[i + 1].state
                );
            }
        }
    }

    #[test]
    fn time_limit_is_not_terminal() {
        // a short horizon the always-right policy survives
        let p = CartPolePhysics {
            max_steps: 5,
            ..Default::default()
        };
        let mut env = CartPole::new(p).unwrap();
        let policy = BehaviorPolicy::epsilon_greedy(Arc::new(AlwaysRight), 0.0);
        let ds = collect(&mut env, &policy, 20, &mut seed::rng(3)).unwrap();
        assert_eq!(ds.episodes().len(), 4);
        assert!(ds.transitions().iter().all(|t| !t.done));
    }

    #[test]
    fn collection_is_deterministic() {
        let run = || {
            let mut env = CartPole::new(CartPolePhysics::default()).unwrap();
            collect(&mut env, &BehaviorPolicy::uniform(), 500, &mut seed::rng(5)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_samples_rejected() {
        let mut env = CartPole::new(CartPolePhysics::default()).unwrap();
        assert!(collect(&mut env, &BehaviorPolicy::uniform(), 0, &mut seed::rng(0)).is_err());
    }
}
