//! Two-model (T-learner) uplift baseline on CART trees.

use ndarray::Array2;

use super::{score_from_effects, ScoreMode, UpliftModel};
use crate::dataset::OfflineDataset;
use crate::distill::{RegressionTree, TreeParams};
use crate::env::{ACTION_HIGH, ACTION_LOW};
use crate::{Error, Result};

/// Per-arm outcome regressors on raw states.
#[derive(Debug, Clone, PartialEq)]
pub struct TLearner {
    pub rev_low: RegressionTree,
    pub rev_high: RegressionTree,
    pub eng_low: RegressionTree,
    pub eng_high: RegressionTree,
}

fn rows(states: &[&[f64]], dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((states.len(), dim));
    for (i, s) in states.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: s.len(),
            });
        }
        x.row_mut(i)
            .iter_mut()
            .zip(s.iter())
            .for_each(|(d, v)| *d = *v);
    }
    Ok(x)
}

impl TLearner {
    /// Fits immediate revenue and engagement per action arm.
    pub fn fit(train: &OfflineDataset, params: TreeParams) -> Result<Self> {
        if train.n_actions() <= ACTION_HIGH {
            return Err(Error::config("T-learner needs a two-action dataset"));
        }
        let arm = |a: usize| -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
            let ts: Vec<_> = train
                .transitions()
                .iter()
                .filter(|t| t.action as usize == a)
                .collect();
            if ts.is_empty() {
                return Err(Error::config(format!(
                    "training data has no records for action {a}"
                )));
            }
            let states: Vec<&[f64]> = ts.iter().map(|t| t.state.as_slice()).collect();
            let x = rows(&states, train.state_dim())?;
            Ok((
                x,
                ts.iter().map(|t| t.reward_rev).collect(),
                ts.iter().map(|t| t.reward_eng).collect(),
            ))
        };
        let (x0, r0, e0) = arm(ACTION_LOW)?;
        let (x1, r1, e1) = arm(ACTION_HIGH)?;
        Ok(Self {
            rev_low: RegressionTree::fit(x0.view(), &r0, params)?,
            rev_high: RegressionTree::fit(x1.view(), &r1, params)?,
            eng_low: RegressionTree::fit(x0.view(), &e0, params)?,
            eng_high: RegressionTree::fit(x1.view(), &e1, params)?,
        })
    }

    /// `(Δrev, Δeng)` per state.
    pub fn effects(&self, states: &[&[f64]]) -> Result<Vec<(f64, f64)>> {
        let x = rows(states, self.rev_low.n_features())?;
        let r1 = self.rev_high.predict(x.view())?;
        let r0 = self.rev_low.predict(x.view())?;
        let e1 = self.eng_high.predict(x.view())?;
        let e0 = self.eng_low.predict(x.view())?;
        Ok((0..states.len())
            .map(|i| (r1[i] - r0[i], e1[i] - e0[i]))
            .collect())
    }
}

impl UpliftModel for TLearner {
    fn score(&self, states: &[&[f64]], mode: ScoreMode, alpha: f64) -> Result<Vec<f64>> {
        Ok(self
            .effects(states)?
            .into_iter()
            .map(|(r, e)| score_from_effects(r, e, mode, alpha))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use crate::seed;
    use rand::Rng;

    fn dataset(outcome: impl Fn(&[f64], usize) -> (f64, f64), n: usize) -> OfflineDataset {
        let mut rng = seed::rng(9);
        let ts = (0..n)
            .map(|i| {
                let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let a = i % 2;
                let (r, e) = outcome(&s, a);
                Transition {
                    episode_id: i as u64,
                    step_index: 0,
                    next_state: s.clone(),
                    state: s,
                    action: a as u32,
                    reward_rev: r,
                    reward_eng: e,
                    done: true,
                    time_bucket: 0,
                }
            })
            .collect();
        OfflineDataset::new(ts, 2, 2).unwrap()
    }

    #[test]
    fn constant_outcomes_give_constant_effects() {
        let ds = dataset(|_, a| if a == 1 { (3.0, -1.0) } else { (1.0, 0.5) }, 400);
        let t = TLearner::fit(&ds, TreeParams::new(4, 5)).unwrap();
        let probe: [&[f64]; 3] = [&[0.0, 0.0], &[0.9, -0.9], &[-0.3, 0.7]];
        for (r, e) in t.effects(&probe).unwrap() {
            assert_eq!(r, 2.0);
            assert_eq!(e, -1.5);
        }
    }

    #[test]
    fn depth_zero_is_difference_of_arm_means() {
        let ds = dataset(|s, a| (s[0] + a as f64, s[1] * (a as f64 - 0.5)), 300);
        let t = TLearner::fit(&ds, TreeParams::new(0, 1)).unwrap();
        let mean = |a: u32, f: fn(&Transition) -> f64| {
            let v: Vec<f64> = ds
                .transitions()
                .iter()
                .filter(|t| t.action == a)
                .map(f)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let d_rev = mean(1, |t| t.reward_rev) - mean(0, |t| t.reward_rev);
        let d_eng = mean(1, |t| t.reward_eng) - mean(0, |t| t.reward_eng);
        let (r, e) = t.effects(&[&[0.2, 0.2]]).unwrap()[0];
        assert!((r - d_rev).abs() < 1e-12 && (e - d_eng).abs() < 1e-12);
    }

    #[test]
    fn recovers_axis_aligned_effect() {
        // effect 1 where x0 > 0.25, else 0; leaf resolution is exact here
        let ds = dataset(
            |s, a| (if a == 1 && s[0] > 0.25 { 1.0 } else { 0.0 }, -(a as f64)),
            2000,
        );
        let t = TLearner::fit(&ds, TreeParams::new(3, 20)).unwrap();
        let probe: [&[f64]; 4] = [&[0.8, 0.0], &[0.4, -0.5], &[0.0, 0.5], &[-0.7, -0.2]];
        let eff = t.effects(&probe).unwrap();
        assert_eq!(
            eff.iter().map(|e| e.0).collect::<Vec<_>>(),
            vec![1.0, 1.0, 0.0, 0.0]
        );
        assert!(eff.iter().all(|e| e.1 == -1.0));
    }

    #[test]
    fn single_arm_rejected() {
        let ds = dataset(|_, _| (0.0, 0.0), 10);
        let only_low: Vec<Transition> = ds
            .transitions()
            .iter()
            .filter(|t| t.action == 0)
            .cloned()
            .collect();
        let ds = OfflineDataset::new(only_low, 2, 2).unwrap();
        assert!(TLearner::fit(&ds, TreeParams::default()).is_err());
    }
}
