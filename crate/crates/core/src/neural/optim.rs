use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::{Gradients, QNetwork};
use crate::{Error, Result};

/// `old_lr * (0.1 + 0.9 * (1 - total_steps / max_train_steps))`.
pub fn decayed_lr(old_lr: f64, total_steps: u64, max_train_steps: u64) -> f64 {
    let frac = (total_steps.min(max_train_steps) as f64) / (max_train_steps.max(1) as f64);
    old_lr * (0.1 + 0.9 * (1.0 - frac))
}

/// What the decay factor multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrAnchor {
    /// Factor applied to the initial rate: a linear ramp from `lr0` to `0.1 lr0`.
    Initial,
    /// Factor applied to the current rate, compounding at every update.
    Previous,
}

impl FromStr for LrAnchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(LrAnchor::Initial),
            "previous" => Ok(LrAnchor::Previous),
            other => Err(Error::config(format!("unknown lr anchor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    initial_lr: f64,
    max_train_steps: u64,
    current_lr: f64,
    anchor: LrAnchor,
    update_every: u64,
}

impl LrSchedule {
    pub fn new(
        initial_lr: f64,
        max_train_steps: u64,
        anchor: LrAnchor,
        update_every: u64,
    ) -> Result<Self> {
        if !(initial_lr >= 0.0 && initial_lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {initial_lr}"
            )));
        }
        if max_train_steps == 0 || update_every == 0 {
            return Err(Error::config(
                "max_train_steps and lr update cadence must be positive",
            ));
        }
        Ok(Self {
            initial_lr,
            max_train_steps,
            current_lr: initial_lr,
            anchor,
            update_every,
        })
    }

    pub fn current(&self) -> f64 {
        self.current_lr
    }

    pub fn initial(&self) -> f64 {
        self.initial_lr
    }

    /// Applies the decay rule at `total_steps` and returns the new rate.
    pub fn lr_step(&mut self, total_steps: u64) -> f64 {
        let base = match self.anchor {
            LrAnchor::Initial => self.initial_lr,
            LrAnchor::Previous => self.current_lr,
        };
        self.current_lr = decayed_lr(base, total_steps, self.max_train_steps);
        self.current_lr
    }

    /// Rate to use for gradient step `step` (0-based), updating at the cadence.
    pub fn rate_for_step(&mut self, step: u64) -> f64 {
        if step > 0 && step % self.update_every == 0 {
            self.lr_step(step);
        }
        self.current_lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd => f.write_str("sgd"),
            OptimizerKind::Momentum { .. } => f.write_str("momentum"),
            OptimizerKind::Adam { .. } => f.write_str("adam"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum { beta: 0.9 }),
            "adam" => Ok(OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            }),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// First-order optimizer with per-parameter state held in flat buffers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &QNetwork) -> Self {
        let n = net.param_count();
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Momentum { .. } => (vec![0.0; n], Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self { kind, m, v, t: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// One descent step. A zero learning rate leaves parameters untouched.
    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients, lr: f64) {
        self.t += 1;
        let kind = self.kind;
        let t = self.t;
        let mut idx = 0usize;
        for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
            let params = layer.w.iter_mut().chain(layer.b.iter_mut());
            let gs = g.w.iter().chain(g.b.iter());
            for (p, &gi) in params.zip(gs) {
                let update = match kind {
                    OptimizerKind::Sgd => gi,
                    OptimizerKind::Momentum { beta } => {
                        self.m[idx] = beta * self.m[idx] + gi;
                        self.m[idx]
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        self.m[idx] = beta1 * self.m[idx] + (1.0 - beta1) * gi;
                        self.v[idx] = beta2 * self.v[idx] + (1.0 - beta2) * gi * gi;
                        let m_hat = self.m[idx] / (1.0 - beta1.powi(t as i32));
                        let v_hat = self.v[idx] / (1.0 - beta2.powi(t as i32));
                        m_hat / (v_hat.sqrt() + eps)
                    }
                };
                if lr != 0.0 {
                    *p -= lr * update;
                }
                idx += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::HeadKind;
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn decay_endpoints() {
        assert_eq!(decayed_lr(1e-4, 0, 1000), 1e-4);
        assert!((decayed_lr(1e-4, 1000, 1000) - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn initial_anchor_is_linear_ramp() {
        let mut s = LrSchedule::new(1.0, 100, LrAnchor::Initial, 1).unwrap();
        assert_eq!(s.current(), 1.0);
        assert!((s.lr_step(50) - 0.55).abs() < 1e-15);
        assert!((s.lr_step(100) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn previous_anchor_compounds() {
        let mut s = LrSchedule::new(1.0, 100, LrAnchor::Previous, 1).unwrap();
        let a = s.lr_step(50);
        let b = s.lr_step(50);
        assert!((a - 0.55).abs() < 1e-15);
        assert!((b - 0.55 * 0.55).abs() < 1e-15);
    }

    #[test]
    fn cadence_controls_updates() {
        let mut s = LrSchedule::new(1.0, 100, LrAnchor::Initial, 10).unwrap();
        for step in 0..10 {
            assert_eq!(s.rate_for_step(step), 1.0);
        }
        assert!(s.rate_for_step(10) < 1.0);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(LrSchedule::new(-1.0, 10, LrAnchor::Initial, 1).is_err());
        assert!(LrSchedule::new(1.0, 0, LrAnchor::Initial, 1).is_err());
        assert!(LrSchedule::new(1.0, 10, LrAnchor::Initial, 0).is_err());
    }

    #[test]
    fn zero_rate_is_bit_identical_for_every_optimizer() {
        for kind in ["sgd", "momentum", "adam"] {
            let kind: OptimizerKind = kind.parse().unwrap();
            let mut net = QNetwork::new(&[3, 4], 2, HeadKind::Dueling, &mut seed::rng(0)).unwrap();
            let before = net.params_flat();
            let mut grads = net.zero_gradients();
            for l in grads.layers.iter_mut() {
                l.w.fill(0.3);
                l.b.fill(-0.2);
            }
            let mut opt = Optimizer::new(kind, &net);
            opt.step(&mut net, &grads, 0.0);
            assert_eq!(net.params_flat(), before);
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut net = QNetwork::zeros(&[2], 2, HeadKind::Plain).unwrap();
        let mut grads = net.zero_gradients();
        grads.layers[0].w.fill(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &net);
        opt.step(&mut net, &grads, 0.5);
        assert!(net.layers()[0].w.iter().all(|v| *v == -0.5));
        assert!(net.layers()[0].b.iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn schedule_is_non_increasing(lr0 in 1e-6f64..1.0, max in 1u64..10_000, every in 1u64..50,
                                      anchor in prop::sample::select(vec![LrAnchor::Initial, LrAnchor::Previous])) {
            let mut s = LrSchedule::new(lr0, max, anchor, every).unwrap();
            let mut prev = s.current();
            prop_assert_eq!(prev, lr0);
            for step in 0..=max.min(500) {
                let lr = s.rate_for_step(step);
                prop_assert!(lr <= prev);
                prop_assert!(lr >= 0.0);
                prev = lr;
            }
        }
    }
}
