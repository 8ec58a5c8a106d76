//! Synthetic ad-session generator.
//!
//! A latent user type drives linear-Gaussian user and engagement features.
//! Revenue rises with the high ad-load action; engagement follows a logistic
//! response that the high action pushes down. Two switchable effects:
//!
//! - carryover: a high action depresses the next session's engagement level
//!   and adds a fatigue term to the next session's engagement penalty;
//! - drift: a time-of-day term shifts the engagement response and tilts how
//!   the penalty varies with the second user feature.
//!
//! Observation layout: `[u0, u1, u2, engagement, prev_low, prev_high]`.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EnvState, Environment, StepOutcome};
use crate::{seed, Error, Result};

pub const ACTION_LOW: usize = 0;
pub const ACTION_HIGH: usize = 1;
pub const N_USER_FEATURES: usize = 3;
pub const N_SESSION_FEATURES: usize = 1;
/// Index range of the previous-action one-hot channel in the observation.
pub const PREV_ACTION_CHANNEL: std::ops::Range<usize> = 4..6;
pub const STATE_DIM: usize = N_USER_FEATURES + N_SESSION_FEATURES + 2;
pub const N_TIME_BUCKETS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionEnvConfig {
    pub n_user_types: usize,
    pub carryover_strength: f64,
    pub drift_amplitude: f64,
    pub episode_length_mean: f64,
    pub rng_seed: u64,
}

impl Default for SessionEnvConfig {
    fn default() -> Self {
        Self {
            n_user_types: 3,
            carryover_strength: 0.5,
            drift_amplitude: 0.0,
            episode_length_mean: 5.0,
            rng_seed: 0,
        }
    }
}

impl SessionEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_user_types == 0 {
            return Err(Error::config("n_user_types must be positive"));
        }
        if !(self.carryover_strength >= 0.0) {
            return Err(Error::config("carryover_strength must be >= 0"));
        }
        if !(self.drift_amplitude >= 0.0) {
            return Err(Error::config("drift_amplitude must be >= 0"));
        }
        if !(self.episode_length_mean >= 1.0) {
            return Err(Error::config("episode_length_mean must be >= 1"));
        }
        Ok(())
    }
}

/// Fixed response-surface coefficients of the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionDynamics {
    pub user_noise: f64,
    pub engagement_init_noise: f64,
    pub engagement_persistence: f64,
    pub engagement_noise: f64,
    pub rev_base: f64,
    pub rev_slope: f64,
    pub lift_base: f64,
    pub lift_amp: f64,
    pub rev_noise: f64,
    pub eng_bias: f64,
    pub eng_level_weight: f64,
    pub eng_user_weight: f64,
    pub penalty_base: f64,
    pub penalty_amp: f64,
    pub fatigue_per_carryover: f64,
    pub drift_tilt: f64,
    pub eng_noise: f64,
}

impl Default for SessionDynamics {
    fn default() -> Self {
        Self {
            user_noise: 0.7,
            engagement_init_noise: 0.5,
            engagement_persistence: 0.6,
            engagement_noise: 0.3,
            rev_base: 0.5,
            rev_slope: 0.1,
            lift_base: 0.25,
            lift_amp: 0.15,
            rev_noise: 0.3,
            eng_bias: 0.3,
            eng_level_weight: 0.6,
            eng_user_weight: 0.4,
            penalty_base: 0.3,
            penalty_amp: 0.6,
            fatigue_per_carryover: 1.0,
            drift_tilt: 0.25,
            eng_noise: 0.2,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone)]
pub struct SessionEnv {
    cfg: SessionEnvConfig,
    dyn_: SessionDynamics,
    user_protos: Vec<[f64; N_USER_FEATURES]>,
    engagement_protos: Vec<f64>,
    user_type: usize,
    obs: [f64; STATE_DIM],
    time_bucket: u32,
    done: bool,
}

impl SessionEnv {
    pub fn new(cfg: SessionEnvConfig) -> Result<Self> {
        Self::with_dynamics(cfg, SessionDynamics::default())
    }

    pub fn with_dynamics(cfg: SessionEnvConfig, dynamics: SessionDynamics) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng_for(cfg.rng_seed, "session-user-types");
        let mut user_protos = Vec::with_capacity(cfg.n_user_types);
        let mut engagement_protos = Vec::with_capacity(cfg.n_user_types);
        for _ in 0..cfg.n_user_types {
            user_protos.push([normal(&mut rng), normal(&mut rng), normal(&mut rng)]);
            engagement_protos.push(0.7 * normal(&mut rng));
        }
        Ok(Self {
            cfg,
            dyn_: dynamics,
            user_protos,
            engagement_protos,
            user_type: 0,
            obs: [0.0; STATE_DIM],
            time_bucket: 0,
            done: true,
        })
    }

    pub fn config(&self) -> &SessionEnvConfig {
        &self.cfg
    }

    pub fn dynamics(&self) -> &SessionDynamics {
        &self.dyn_
    }

    /// Latent type of the current episode (not part of the observation).
    pub fn user_type(&self) -> usize {
        self.user_type
    }

    /// Forces the observation and time bucket, e.g. to probe the response
    /// surface from a chosen state.
    pub fn set_state(
        &mut self,
        features: &[f64],
        time_bucket: u32,
        user_type: usize,
    ) -> Result<()> {
        if features.len() != STATE_DIM {
            return Err(Error::Dimension {
                expected: STATE_DIM,
                got: features.len(),
            });
        }
        if user_type >= self.cfg.n_user_types {
            return Err(Error::contract("user type out of range"));
        }
        self.obs.copy_from_slice(features);
        self.time_bucket = time_bucket % N_TIME_BUCKETS;
        self.user_type = user_type;
        self.done = false;
        Ok(())
    }

    fn drift(&self, time_bucket: u32) -> f64 {
        let phase = 2.0 * PI * (f64::from(time_bucket) + 0.5) / f64::from(N_TIME_BUCKETS);
        self.cfg.drift_amplitude * phase.sin()
    }

    fn engagement_logit(&self, obs: &[f64], time_bucket: u32) -> f64 {
        let d = &self.dyn_;
        d.eng_bias
            + d.eng_level_weight * obs[3]
            + d.eng_user_weight * obs[1]
            + self.drift(time_bucket)
    }

    fn engagement_penalty(&self, obs: &[f64], time_bucket: u32) -> f64 {
        let d = &self.dyn_;
        let fatigue = self.cfg.carryover_strength
            * d.fatigue_per_carryover
            * obs[PREV_ACTION_CHANNEL.end - 1];
        d.penalty_base
            + d.penalty_amp * sigmoid(1.5 * obs[2])
            + fatigue
            + d.drift_tilt * self.drift(time_bucket) * obs[1].tanh()
    }

    fn revenue_lift(&self, obs: &[f64]) -> f64 {
        let d = &self.dyn_;
        d.lift_base + d.lift_amp * (obs[0] - 0.5 * obs[2]).tanh()
    }

    /// Closed-form `(E[reward_rev], E[reward_eng])` for an observation,
    /// action and time bucket.
    pub fn expected_rewards(&self, obs: &[f64], action: usize, time_bucket: u32) -> (f64, f64) {
        let d = &self.dyn_;
        let high = if action == ACTION_HIGH { 1.0 } else { 0.0 };
        let rev = d.rev_base + d.rev_slope * obs[0] + high * self.revenue_lift(obs);
        let eng = sigmoid(
            self.engagement_logit(obs, time_bucket)
                - high * self.engagement_penalty(obs, time_bucket),
        );
        (rev, eng)
    }

    /// Ground-truth immediate treatment effects `(Δrev, Δeng)` of the high
    /// action relative to the low one.
    pub fn true_effects(&self, obs: &[f64], time_bucket: u32) -> (f64, f64) {
        let (r1, e1) = self.expected_rewards(obs, ACTION_HIGH, time_bucket);
        let (r0, e0) = self.expected_rewards(obs, ACTION_LOW, time_bucket);
        (r1 - r0, e1 - e0)
    }

    fn observe(&self) -> EnvState {
        EnvState {
            features: self.obs.to_vec(),
            done: self.done,
        }
    }
}

impl Environment for SessionEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState {
        let d = self.dyn_;
        self.user_type = rng.random_range(0..self.cfg.n_user_types);
        self.time_bucket = rng.random_range(0..N_TIME_BUCKETS);
        let proto = self.user_protos[self.user_type];
        for (i, p) in proto.iter().enumerate() {
            self.obs[i] = p + d.user_noise * normal(rng);
        }
        self.obs[3] =
            self.engagement_protos[self.user_type] + d.engagement_init_noise * normal(rng);
        self.obs[PREV_ACTION_CHANNEL.start] = 0.0;
        self.obs[PREV_ACTION_CHANNEL.start + 1] = 0.0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::contract("step called on a finished session episode"));
        }
        if action > ACTION_HIGH {
            return Err(Error::contract(format!(
                "session action {action} is not an ad-load level"
            )));
        }
        let d = self.dyn_;
        let (mean_rev, mean_eng) = self.expected_rewards(&self.obs, action, self.time_bucket);
        let reward_rev = mean_rev + d.rev_noise * normal(rng);
        let reward_eng = mean_eng + d.eng_noise * normal(rng);

        let high = if action == ACTION_HIGH { 1.0 } else { 0.0 };
        let proto_e = self.engagement_protos[self.user_type];
        self.obs[3] = d.engagement_persistence * self.obs[3]
            + (1.0 - d.engagement_persistence) * proto_e
            - self.cfg.carryover_strength * high
            + d.engagement_noise * normal(rng);
        self.obs[PREV_ACTION_CHANNEL.start] = 1.0 - high;
        self.obs[PREV_ACTION_CHANNEL.start + 1] = high;

        let p_end = 1.0 / self.cfg.episode_length_mean;
        self.done = rng.random::<f64>() < p_end;
        Ok(StepOutcome {
            next_state: self.observe(),
            reward_rev,
            reward_eng,
            done: self.done,
        })
    }

    fn time_bucket(&self) -> u32 {
        self.time_bucket
    }
}
