//! Episodic environments.
//!
//! Both environments own their internal state and draw all randomness from a
//! caller-supplied stream, so the same seed and action sequence always yields
//! the same trajectory.

mod cartpole;
mod session;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cartpole::{
    euler_update, CartPole, CartPolePhysics, PerturbParam, THETA_THRESHOLD, X_THRESHOLD,
};
pub use session::{
    SessionDynamics, SessionEnv, SessionEnvConfig, ACTION_HIGH, ACTION_LOW, N_SESSION_FEATURES,
    N_TIME_BUCKETS, N_USER_FEATURES, PREV_ACTION_CHANNEL, STATE_DIM,
};

/// Observation emitted by an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub features: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward_rev: f64,
    pub reward_eng: f64,
    pub done: bool,
}

pub trait Environment {
    fn state_dim(&self) -> usize;

    fn n_actions(&self) -> usize;

    /// Starts a fresh episode.
    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState;

    /// Advances one step. Stepping a finished episode is an error; callers
    /// must `reset` explicitly.
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepOutcome>;

    /// Time-of-day bucket of the current episode (0 for time-free envs).
    fn time_bucket(&self) -> u32 {
        0
    }

    /// True when the last step ended the episode on a time limit rather than
    /// a terminal state. Such a step should still bootstrap.
    fn truncated(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cartpole,
    Session,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::Cartpole => f.write_str("cartpole"),
            EnvKind::Session => f.write_str("session"),
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::Cartpole),
            "session" => Ok(EnvKind::Session),
            other => Err(Error::config(format!("unknown env kind `{other}`"))),
        }
    }
}
