//! Greedy-rollout reward under one perturbed CartPole parameter.

use std::io::Write;

use serde::Serialize;

use crate::agents::greedy_return;
use crate::dataset::ActionValues;
use crate::env::{CartPole, CartPolePhysics, PerturbParam};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param_value: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSweepResult {
    pub param: PerturbParam,
    pub nominal: f64,
    pub points: Vec<SweepPoint>,
    /// Per grid value, the return of every `(seed, episode)` rollout.
    pub returns: Vec<Vec<f64>>,
}

impl PerturbSweepResult {
    pub fn at(&self, value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.param_value == value)
    }

    pub fn nominal_point(&self) -> &SweepPoint {
        self.at(self.nominal)
            .expect("grid contains the nominal value")
    }

    /// Grid point farthest from nominal; the larger value on a tie.
    pub fn harshest(&self) -> &SweepPoint {
        self.points
            .iter()
            .max_by(|a, b| {
                let da = (a.param_value - self.nominal).abs();
                let db = (b.param_value - self.nominal).abs();
                da.total_cmp(&db)
                    .then(a.param_value.total_cmp(&b.param_value))
            })
            .expect("grid is non-empty")
    }
}

/// Five points: ±50% around nominal for the physical parameters, `0..=0.3`
/// for the action flip probability.
pub fn default_grid(param: PerturbParam, nominal: &CartPolePhysics) -> Vec<f64> {
    let steps = [0.0, 0.25, 0.5, 0.75, 1.0];
    match param {
        PerturbParam::ActionFlipProb => steps.iter().map(|s| 0.3 * s).collect(),
        _ => {
            let v = nominal.get(param);
            steps.iter().map(|s| v * (0.5 + s)).collect()
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Runs `seeds × episodes` greedy rollouts per grid value. Rollout `(s, e)`
/// draws from the same stream at every grid value, so the nominal point
/// reproduces an unperturbed evaluation with the same `root_seed`.
pub fn perturb_sweep(
    agent: &dyn ActionValues,
    base: &CartPolePhysics,
    param: PerturbParam,
    grid: &[f64],
    episodes: usize,
    seeds: usize,
    root_seed: u64,
) -> Result<PerturbSweepResult> {
    if grid.is_empty() || episodes == 0 || seeds == 0 {
        return Err(Error::config(
            "sweep needs a non-empty grid, episodes >= 1 and seeds >= 1",
        ));
    }
    let nominal = base.get(param);
    if !grid.contains(&nominal) {
        return Err(Error::config(format!(
            "{param} grid must contain the nominal value {nominal}"
        )));
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut returns = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut env = CartPole::new(base.with(param, value)?)?;
        let mut rs = Vec::with_capacity(seeds * episodes);
        for s in 0..seeds {
            for e in 0..episodes {
                let idx = (s * episodes + e) as u64;
                let mut rng = seed::rng(seed::derive_indexed(root_seed, "perturb-sweep", idx));
                rs.push(greedy_return(agent, &mut env, &mut rng)?);
            }
        }
        let (mean, std) = mean_std(&rs);
        points.push(SweepPoint {
            param_value: value,
            mean,
            std,
        });
        returns.push(rs);
    }
    Ok(PerturbSweepResult {
        param,
        nominal,
        points,
        returns,
    })
}

/// CSV with header `param_value,mean,std`.
pub fn write_sweep_csv<W: Write>(result: &PerturbSweepResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in &result.points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pushes toward the side the pole leans.
    struct Balancer;

    impl ActionValues for Balancer {
        fn action_values(&self, s: &[f64]) -> Vec<f64> {
            let push_right = s[2] + 0.5 * s[3] > 0.0;
            if push_right {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        }
    }

    #[test]
    fn default_grids_contain_nominal() {
        let p = CartPolePhysics::default();
        assert_eq!(
            default_grid(PerturbParam::ForceMag, &p),
            vec![5.0, 7.5, 10.0, 12.5, 15.0]
        );
        assert_eq!(
            default_grid(PerturbParam::PoleLength, &p),
            vec![0.25, 0.375, 0.5, 0.625, 0.75]
        );
        let flip = default_grid(PerturbParam::ActionFlipProb, &p);
        assert_eq!(flip[0], 0.0);
        assert!((flip[4] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn nominal_point_matches_plain_evaluation() {
        let p = CartPolePhysics::default();
        let grid = default_grid(PerturbParam::ActionFlipProb, &p);
        let sweep =
            perturb_sweep(&Balancer, &p, PerturbParam::ActionFlipProb, &grid, 3, 2, 11).unwrap();
        let mut env = CartPole::new(p).unwrap();
        let mut direct = Vec::new();
        for i in 0..6 {
            let mut rng = seed::rng(seed::derive_indexed(11, "perturb-sweep", i));
            direct.push(greedy_return(&Balancer, &mut env, &mut rng).unwrap());
        }
        assert_eq!(sweep.returns[0], direct);
        assert_eq!(sweep.nominal_point().param_value, 0.0);
        assert!((sweep.harshest().param_value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn flips_do_not_help() {
        let p = CartPolePhysics::default();
        let sweep = perturb_sweep(
            &Balancer,
            &p,
            PerturbParam::ActionFlipProb,
            &[0.0, 0.3],
            10,
            3,
            4,
        )
        .unwrap();
        assert!(sweep.points[1].mean <= sweep.points[0].mean);
    }

    #[test]
    fn grid_without_nominal_rejected() {
        let p = CartPolePhysics::default();
        assert!(
            perturb_sweep(&Balancer, &p, PerturbParam::ForceMag, &[5.0, 15.0], 1, 1, 0).is_err()
        );
        assert!(perturb_sweep(&Balancer, &p, PerturbParam::ForceMag, &[10.0], 0, 1, 0).is_err());
    }

    #[test]
    fn csv_schema() {
        let p = CartPolePhysics::default();
        let sweep =
            perturb_sweep(&Balancer, &p, PerturbParam::ForceMag, &[5.0, 10.0], 1, 1, 0).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&sweep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("param_value,mean,std\n5.0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
