use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{EnvState, Environment, StepOutcome};
use crate::{Error, Result};

pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

/// Physical constants of the cart-pole system. `pole_length` is the pole
/// half-length, as in the common reference implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPolePhysics {
    pub force_mag: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub time_step: f64,
    pub action_flip_prob: f64,
    pub max_steps: usize,
}

impl Default for CartPolePhysics {
    fn default() -> Self {
        Self {
            force_mag: 10.0,
            pole_length: 0.5,
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            time_step: 0.02,
            action_flip_prob: 0.0,
            max_steps: 500,
        }
    }
}

impl CartPolePhysics {
    pub fn validate(&self) -> Result<()> {
        if !(self.force_mag > 0.0) {
            return Err(Error::config("force_mag must be > 0"));
        }
        if !(self.pole_length > 0.0) {
            return Err(Error::config("pole_length must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.action_flip_prob) {
            return Err(Error::config("action_flip_prob must lie in [0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        if !(self.cart_mass > 0.0 && self.pole_mass > 0.0 && self.time_step > 0.0) {
            return Err(Error::config("masses and time step must be positive"));
        }
        Ok(())
    }

    pub fn get(&self, param: PerturbParam) -> f64 {
        match param {
            PerturbParam::ForceMag => self.force_mag,
            PerturbParam::PoleLength => self.pole_length,
            PerturbParam::ActionFlipProb => self.action_flip_prob,
        }
    }

    /// Copy with exactly one perturbation parameter replaced.
    pub fn with(&self, param: PerturbParam, value: f64) -> Result<Self> {
        let mut p = *self;
        match param {
            PerturbParam::ForceMag => p.force_mag = value,
            PerturbParam::PoleLength => p.pole_length = value,
            PerturbParam::ActionFlipProb => p.action_flip_prob = value,
        }
        p.validate()?;
        Ok(p)
    }
}

/// The three perturbation axes of the robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbParam {
    ForceMag,
    PoleLength,
    ActionFlipProb,
}

impl PerturbParam {
    pub const ALL: [PerturbParam; 3] = [Self::ForceMag, Self::PoleLength, Self::ActionFlipProb];

    pub fn name(&self) -> &'static str {
        match self {
            PerturbParam::ForceMag => "force_mag",
            PerturbParam::PoleLength => "pole_length",
            PerturbParam::ActionFlipProb => "action_flip_prob",
        }
    }
}

impl fmt::Display for PerturbParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "force_mag" => Ok(Self::ForceMag),
            "pole_length" | "length" => Ok(Self::PoleLength),
            "action_flip_prob" => Ok(Self::ActionFlipProb),
            other => Err(Error::config(format!(
                "unknown perturbation parameter `{other}`"
            ))),
        }
    }
}

/// One explicit-Euler step of the cart-pole equations of motion.
pub fn euler_update(state: [f64; 4], force: f64, p: &CartPolePhysics) -> [f64; 4] {
    let [x, x_dot, theta, theta_dot] = state;
    let total_mass = p.cart_mass + p.pole_mass;
    let polemass_length = p.pole_mass * p.pole_length;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.pole_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
    [
        x + p.time_step * x_dot,
        x_dot + p.time_step * x_acc,
        theta + p.time_step * theta_dot,
        theta_dot + p.time_step * theta_acc,
    ]
}

#[derive(Debug, Clone)]
pub struct CartPole {
    physics: CartPolePhysics,
    state: [f64; 4],
    steps: usize,
    done: bool,
    failed: bool,
}

impl CartPole {
    pub fn new(physics: CartPolePhysics) -> Result<Self> {
        physics.validate()?;
        Ok(Self {
            physics,
            state: [0.0; 4],
            steps: 0,
            done: true,
            failed: false,
        })
    }

    /// Places the system in an arbitrary (non-terminal) configuration.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.failed = false;
    }

    pub fn physics(&self) -> &CartPolePhysics {
        &self.physics
    }

    pub fn raw_state(&self) -> [f64; 4] {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn observe(&self) -> EnvState {
        EnvState {
            features: self.state.to_vec(),
            done: self.done,
        }
    }
}

impl Environment for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> EnvState {
        for v in self.state.iter_mut() {
            *v = rng.random_range(-0.05..=0.05);
        }
        self.steps = 0;
        self.done = false;
        self.failed = false;
        self.observe()
    }

    fn truncated(&self) -> bool {
        self.done && !self.failed
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::contract("step called on a terminal cart-pole state"));
        }
        if action > 1 {
            return Err(Error::contract(format!(
                "cart-pole action {action} not in {{0, 1}}"
            )));
        }
        // one draw per step regardless of the flip probability keeps streams aligned
        let flip = rng.random::<f64>() < self.physics.action_flip_prob;
        let applied = if flip { 1 - action } else { action };
        let force = if applied == 1 {
            self.physics.force_mag
        } else {
            -self.physics.force_mag
        };
        self.state = euler_update(self.state, force, &self.physics);
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        self.failed = x.abs() > X_THRESHOLD || theta.abs() > THETA_THRESHOLD;
        self.done = self.failed || self.steps >= self.physics.max_steps;
        Ok(StepOutcome {
            next_state: self.observe(),
            reward_rev: 1.0,
            reward_eng: 0.0,
            done: self.done,
        })
    }
}
