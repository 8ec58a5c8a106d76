use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::bellman::greedy_policy;
use super::{norm_without_bias, LinearRmdp};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FqiSample {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqiDataset {
    pub samples: Vec<FqiSample>,
}

impl FqiDataset {
    /// Every state-action pair with `quantum` successors laid out in exact
    /// nominal proportions. Requires every `p0` entry to be a multiple of
    /// `1 / quantum`.
    pub fn exact_proportions(mdp: &LinearRmdp, quantum: usize) -> Result<Self> {
        let mut samples = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                for (sp, p) in mdp.p0_row(s, a).iter().enumerate() {
                    let k = p * quantum as f64;
                    if (k - k.round()).abs() > 1e-9 {
                        return Err(Error::config(format!(
                            "p0({sp}|{s},{a}) = {p} is not a multiple of 1/{quantum}"
                        )));
                    }
                    for _ in 0..k.round() as usize {
                        samples.push(FqiSample {
                            s,
                            a,
                            r: mdp.reward(s, a),
                            s_next: sp,
                        });
                    }
                }
            }
        }
        Ok(Self { samples })
    }

    /// `n` i.i.d. draws with uniform states and actions and nominal successors.
    pub fn sample_uniform(mdp: &LinearRmdp, n: usize, rng: &mut dyn RngCore) -> Self {
        let samples = (0..n)
            .map(|_| {
                let s = rng.random_range(0..mdp.n_states());
                let a = rng.random_range(0..mdp.n_actions());
                let u: f64 = rng.random();
                let row = mdp.p0_row(s, a);
                let mut acc = 0.0;
                let mut s_next = row.len() - 1;
                for (i, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        s_next = i;
                        break;
                    }
                }
                FqiSample {
                    s,
                    a,
                    r: mdp.reward(s, a),
                    s_next,
                }
            })
            .collect();
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqiOutput {
    /// Final iterate as an `|S| x |A|` table.
    pub f: DMatrix<f64>,
    /// `policies[t]` is greedy with respect to `f_t`, for `t = 0..=T`.
    pub policies: Vec<Vec<usize>>,
    /// Whether any regression needed the ridge fallback.
    pub ridge_used: bool,
}

/// Robust fitted Q-iteration with closed-form least squares on `psi`.
///
/// Each iterate regresses `r + gamma * max_a f_{t-1}(s', a) - gamma * delta *
/// ||w_{t-1, 2:d}||` onto `psi(s, a)`, where `w_{t-1}` are the coefficients
/// of `max_a f_{t-1}` on `phi`. Starts from `f_0 = 0`.
pub fn robust_fqi(
    ds: &FqiDataset,
    mdp: &LinearRmdp,
    delta: f64,
    iterations: usize,
) -> Result<FqiOutput> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::config("delta must be finite and >= 0"));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if ds
        .samples
        .iter()
        .any(|x| x.s >= ns || x.a >= na || x.s_next >= ns)
    {
        return Err(Error::contract("dataset indexes outside the MDP"));
    }
    if ds.is_empty() && iterations > 0 {
        return Err(Error::contract("robust FQI needs at least one sample"));
    }
    let psi = mdp.psi();
    let k = psi.ncols();
    // Gram matrix of the design, shared by every iteration
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for x in &ds.samples {
        let row = psi.row(x.s * na + x.a);
        gram += row.transpose() * row;
    }
    let chol = gram.clone().cholesky();
    let ridge_used = chol.is_none() && iterations > 0;
    let solver = match chol {
        Some(c) => c,
        None => {
            let lambda = 1e-8 * (1.0 + gram.trace() / k as f64);
            if iterations > 0 {
                log::warn!(
                    "robust FQI design is singular; falling back to ridge with lambda {lambda:.2e}"
                );
            }
            (gram + DMatrix::identity(k, k) * lambda)
                .cholesky()
                .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?
        }
    };
    let mut f = DMatrix::zeros(ns, na);
    let mut policies = vec![greedy_policy(&f)];
    for _ in 0..iterations {
        let v = DVector::from_fn(ns, |s, _| f.row(s).max());
        let (w, _) = mdp.project_values(&v)?;
        let penalty = mdp.gamma() * delta * norm_without_bias(&w);
        let mut rhs = DVector::<f64>::zeros(k);
        for x in &ds.samples {
            let y = x.r + mdp.gamma() * v[x.s_next] - penalty;
            rhs += psi.row(x.s * na + x.a).transpose() * y;
        }
        let theta = solver.solve(&rhs);
        let fitted = psi * theta;
        f = DMatrix::from_fn(ns, na, |s, a| fitted[s * na + a]);
        policies.push(greedy_policy(&f));
    }
    Ok(FqiOutput {
        f,
        policies,
        ridge_used,
    })
}
