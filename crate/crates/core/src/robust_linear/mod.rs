//! Small explicit robust MDPs with linear features: the closed-form IPM
//! robust Bellman operator, a brute-force inner-minimisation oracle, robust
//! value iteration, robust fitted Q-iteration and numeric theory checks.

mod bellman;
mod fqi;
mod oracle;
mod theory;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::{Error, Result};

pub use bellman::{
    contraction_probe, greedy_policy, robust_bellman_apply, robust_policy_value,
    robust_value_iteration, BellmanOutput, ContractionProbe, ValueIteration,
};
pub use fqi::{robust_fqi, FqiDataset, FqiOutput, FqiSample};
pub use oracle::{ipm_inner_min_oracle, LinearValue, OracleOptions, OracleResult};
pub use theory::{
    fqi_suite, prop1_suite, prop2_suite, theorem1_trend, thm1_suite, write_rows, FqiRow, GapCell,
    Prop1Row, Prop2Report, Thm1Config, Thm1Table,
};

/// Tolerance for "exactly representable" projections.
pub const PROJECTION_TOL: f64 = 1e-8;

/// Explicit finite MDP with state features `phi` (first column all ones) and
/// state-action features `psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRmdp {
    n_states: usize,
    n_actions: usize,
    /// `p0[(s * n_actions + a) * n_states + s']`.
    p0: Vec<f64>,
    /// `rewards[s * n_actions + a]`, each in `[0, 1]`.
    rewards: Vec<f64>,
    gamma: f64,
    delta: f64,
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
}

/// `[1, e_2, ..., e_n]`: a full-rank tabular basis whose first column is the bias.
pub fn tabular_phi(n_states: usize) -> DMatrix<f64> {
    DMatrix::from_fn(
        n_states,
        n_states,
        |s, j| if j == 0 || s == j { 1.0 } else { 0.0 },
    )
}

/// One-hot state-action features.
pub fn one_hot_psi(n_states: usize, n_actions: usize) -> DMatrix<f64> {
    DMatrix::identity(n_states * n_actions, n_states * n_actions)
}

impl LinearRmdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p0: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        delta: f64,
        phi: DMatrix<f64>,
        psi: DMatrix<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config(
                "an MDP needs at least one state and one action",
            ));
        }
        let sa = n_states * n_actions;
        if p0.len() != sa * n_states {
            return Err(Error::Dimension {
                expected: sa * n_states,
                got: p0.len(),
            });
        }
        if rewards.len() != sa {
            return Err(Error::Dimension {
                expected: sa,
                got: rewards.len(),
            });
        }
        for row in p0.chunks(n_states) {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "every nominal transition row must be a probability vector",
                ));
            }
        }
        if rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("rewards must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("gamma must lie in [0, 1)"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::config("delta must be finite and >= 0"));
        }
        if phi.nrows() != n_states || phi.ncols() == 0 || phi.ncols() > n_states {
            return Err(Error::config("phi must be |S| x d with 1 <= d <= |S|"));
        }
        if phi.column(0).iter().any(|v| *v != 1.0) {
            return Err(Error::config("the first feature must be the constant 1"));
        }
        if phi.rank(1e-10) < phi.ncols() {
            return Err(Error::config("phi must have full column rank"));
        }
        if psi.nrows() != sa {
            return Err(Error::Dimension {
                expected: sa,
                got: psi.nrows(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            p0,
            rewards,
            gamma,
            delta,
            phi,
            psi,
        })
    }

    /// Tabular features: `phi = [1, e_2, ..., e_S]`, one-hot `psi`.
    pub fn tabular(
        n_states: usize,
        n_actions: usize,
        p0: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        delta: f64,
    ) -> Result<Self> {
        Self::new(
            n_states,
            n_actions,
            p0,
            rewards,
            gamma,
            delta,
            tabular_phi(n_states),
            one_hot_psi(n_states, n_actions),
        )
    }

    /// Random tabular MDP whose transition probabilities are positive
    /// multiples of `1 / quantum`, so an exact-proportion dataset with
    /// `quantum` next states per pair reproduces `p0` exactly.
    pub fn random_tabular(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        delta: f64,
        quantum: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if quantum < n_states {
            return Err(Error::config(
                "quantum must be at least the number of states",
            ));
        }
        let mut p0 = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            // one unit per state keeps every entry positive, the rest is spread at random
            let mut counts = vec![1usize; n_states];
            for _ in 0..quantum - n_states {
                counts[rng.random_range(0..n_states)] += 1;
            }
            p0.extend(counts.iter().map(|c| *c as f64 / quantum as f64));
        }
        let rewards = (0..n_states * n_actions)
            .map(|_| rng.random::<f64>())
            .collect();
        Self::tabular(n_states, n_actions, p0, rewards, gamma, delta)
    }

    /// A chain where `right` drifts towards a rewarding end state and `left`
    /// pays a small immediate reward at the start. Myopic policies are
    /// suboptimal.
    pub fn chain(n_states: usize, slip: f64, gamma: f64, delta: f64) -> Result<Self> {
        if n_states < 2 || !(0.0..1.0).contains(&slip) {
            return Err(Error::config("chain needs >= 2 states and slip in [0, 1)"));
        }
        let (left, right) = (0usize, 1usize);
        let mut p0 = vec![0.0; n_states * 2 * n_states];
        let mut rewards = vec![0.0; n_states * 2];
        for s in 0..n_states {
            let l = s.saturating_sub(1);
            let r = (s + 1).min(n_states - 1);
            let base_l = (s * 2 + left) * n_states;
            p0[base_l + l] += 1.0 - slip;
            p0[base_l + r] += slip;
            let base_r = (s * 2 + right) * n_states;
            p0[base_r + r] += 1.0 - slip;
            p0[base_r + l] += slip;
        }
        rewards[left] = 0.2;
        rewards[(n_states - 1) * 2 + right] = 1.0;
        Self::tabular(n_states, 2, p0, rewards, gamma, delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::config("delta must be finite and >= 0"));
        }
        Ok(Self {
            delta,
            ..self.clone()
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn p0_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p0[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    /// Smallest entry of the nominal kernel.
    pub fn min_p0(&self) -> f64 {
        self.p0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `lambda_min(phi^T diag(nu_s) phi)` for a state distribution `nu_s`.
    pub fn lambda_min(&self, nu_s: &[f64]) -> Result<f64> {
        if nu_s.len() != self.n_states {
            return Err(Error::Dimension {
                expected: self.n_states,
                got: nu_s.len(),
            });
        }
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(nu_s));
        let g = self.phi.transpose() * d * &self.phi;
        Ok(g.symmetric_eigenvalues().min())
    }

    /// Radius below which the robust operator is guaranteed to contract,
    /// `lambda_min(phi^T diag(nu_s) phi) (1 - gamma) / gamma`, with `nu_s`
    /// the uniform state distribution.
    pub fn contraction_delta_bound(&self) -> f64 {
        let nu = vec![1.0 / self.n_states as f64; self.n_states];
        let lam = self.lambda_min(&nu).expect("dimension matches");
        if self.gamma == 0.0 {
            f64::INFINITY
        } else {
            lam * (1.0 - self.gamma) / self.gamma
        }
    }

    /// Least-squares coefficients of `v` in the span of `phi` and the
    /// sup-norm residual of that fit.
    pub fn project_values(&self, v: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let svd = self.phi.clone().svd(true, true);
        let w = svd
            .solve(v, 1e-12)
            .map_err(|e| Error::Numerical(format!("least-squares projection failed: {e}")))?;
        let residual = (&self.phi * &w - v).amax();
        Ok((w, residual))
    }
}

/// Euclidean norm of all coordinates but the first.
pub fn norm_without_bias(w: &DVector<f64>) -> f64 {
    w.rows(1, w.len() - 1).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn tabular_basis_is_full_rank_with_bias() {
        let phi = tabular_phi(5);
        assert_eq!(phi.rank(1e-12), 5);
        assert!(phi.column(0).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn lambda_min_closed_form() {
        // for [1, e_2..e_S] with uniform weights the smallest eigenvalue of
        // phi^T phi solves l^2 - (S + 1) l + 1 = 0
        for s in 2..7usize {
            let m = LinearRmdp::chain(s, 0.1, 0.9, 0.0).unwrap();
            let n = s as f64;
            let expected = ((n + 1.0) - ((n + 1.0).powi(2) - 4.0).sqrt()) / 2.0 / n;
            let got = m.lambda_min(&vec![1.0 / n; s]).unwrap();
            assert!((got - expected).abs() < 1e-12, "{s}: {got} vs {expected}");
        }
    }

    #[test]
    fn random_mdp_is_quantized_and_positive() {
        let m = LinearRmdp::random_tabular(4, 2, 0.7, 0.01, 40, &mut seed::rng(3)).unwrap();
        assert!(m.min_p0() >= 1.0 / 40.0);
        for s in 0..4 {
            for a in 0..2 {
                for p in m.p0_row(s, a) {
                    let k = p * 40.0;
                    assert!((k - k.round()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_mdps_rejected() {
        assert!(
            LinearRmdp::tabular(2, 1, vec![0.5, 0.6, 1.0, 0.0], vec![0.0, 0.0], 0.9, 0.0).is_err()
        );
        assert!(
            LinearRmdp::tabular(2, 1, vec![0.5, 0.5, 1.0, 0.0], vec![2.0, 0.0], 0.9, 0.0).is_err()
        );
        assert!(
            LinearRmdp::tabular(2, 1, vec![0.5, 0.5, 1.0, 0.0], vec![0.0, 0.0], 1.0, 0.0).is_err()
        );
        assert!(
            LinearRmdp::tabular(2, 1, vec![0.5, 0.5, 1.0, 0.0], vec![0.0, 0.0], 0.9, -0.1).is_err()
        );
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(LinearRmdp::new(
            2,
            1,
            vec![0.5, 0.5, 1.0, 0.0],
            vec![0.0, 0.0],
            0.9,
            0.0,
            singular,
            one_hot_psi(2, 1)
        )
        .is_err());
    }

    #[test]
    fn projection_is_exact_for_tabular_features() {
        let m = LinearRmdp::chain(4, 0.2, 0.9, 0.0).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let (w, res) = m.project_values(&v).unwrap();
        assert!(res < 1e-12);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] + 3.0).abs() < 1e-12);
    }
}
