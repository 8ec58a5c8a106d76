//! Offline robust reinforcement learning for session-level ad-load decisions.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: a perturbable CartPole and a synthetic ad-session generator.
//! - [`dataset`]: offline transition corpora, behaviour-policy collection, splits.
//! - [`neural`]: a small dense network with a dueling value/advantage head.
//! - [`agents`]: offline DQN, dueling DQN and the IPM-robust dueling DQN trainers.
//! - [`robust_linear`]: exact small-scale robust MDP machinery and theory checks.
//! - [`uplift`]: cost curves, AUCC, the T-learner baseline and perturbation sweeps.
//! - [`distill`]: CART regression trees and teacher-student distillation.
//! - [`experiments`]: end-to-end experiment recipes shared by the CLI and tests.

pub mod agents;
pub mod dataset;
pub mod distill;
pub mod env;
mod error;
pub mod experiments;
pub mod neural;
pub mod robust_linear;
pub mod seed;
pub mod uplift;

pub use agents::{AgentConfig, Objective, TrainedAgent, Variant};
pub use dataset::{BehaviorPolicy, OfflineDataset, Transition};
pub use distill::RegressionTree;
pub use env::{
    CartPole, CartPolePhysics, EnvState, Environment, SessionEnv, SessionEnvConfig, StepOutcome,
};
pub use error::{Error, Result};
pub use neural::{HeadKind, QNetwork, RegMode};
pub use robust_linear::LinearRmdp;
pub use uplift::{CostCurve, RankedUnit, ScoreMode};
