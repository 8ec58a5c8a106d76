use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{norm_without_bias, LinearRmdp, PROJECTION_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanOutput {
    /// `|S| x |A|` table.
    pub q: DMatrix<f64>,
    /// Coefficients of `max_b Q(., b)` in the span of `phi`.
    pub w: DVector<f64>,
    /// Sup-norm residual of that projection.
    pub residual: f64,
}

fn row_max(q: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(q.nrows(), |s, _| q.row(s).max())
}

fn check_table(q: &DMatrix<f64>, mdp: &LinearRmdp) -> Result<()> {
    if q.nrows() != mdp.n_states() || q.ncols() != mdp.n_actions() {
        return Err(Error::contract(format!(
            "Q table is {}x{}, expected {}x{}",
            q.nrows(),
            q.ncols(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("Q table has non-finite entries"));
    }
    Ok(())
}

/// Robust backup with the IPM closed form:
/// `r(s,a) + gamma * (p0(s,a)^T V - delta * ||w_{2:d}||)` where `V = max_b Q`
/// and `w` are its coefficients on `phi`.
pub fn robust_bellman_apply(q: &DMatrix<f64>, mdp: &LinearRmdp) -> Result<BellmanOutput> {
    check_table(q, mdp)?;
    let v = row_max(q);
    let (w, residual) = mdp.project_values(&v)?;
    let penalty = mdp.delta() * norm_without_bias(&w);
    let q = DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        let ev: f64 = mdp
            .p0_row(s, a)
            .iter()
            .zip(v.iter())
            .map(|(p, x)| p * x)
            .sum();
        mdp.reward(s, a) + mdp.gamma() * (ev - penalty)
    });
    Ok(BellmanOutput { q, w, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub q: DMatrix<f64>,
    pub iterations: usize,
    /// `||Q_{k+1} - Q_k|| / ||Q_k - Q_{k-1}||` in sup norm.
    pub ratios: Vec<f64>,
}

/// Iterates the robust backup from `Q = 0` to a sup-norm fixed point.
///
/// Requires `delta` below [`LinearRmdp::contraction_delta_bound`]; a
/// consecutive-difference ratio at or above one aborts.
pub fn robust_value_iteration(
    mdp: &LinearRmdp,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIteration> {
    let bound = mdp.contraction_delta_bound();
    if mdp.delta() > 0.0 && mdp.delta() >= bound {
        return Err(Error::config(format!(
            "delta {} is not below the contraction bound {bound:.6}",
            mdp.delta()
        )));
    }
    let mut q = DMatrix::zeros(mdp.n_states(), mdp.n_actions());
    let mut ratios = Vec::new();
    let mut prev_diff: Option<f64> = None;
    for it in 1..=max_iters {
        let out = robust_bellman_apply(&q, mdp)?;
        let scale = 1.0 + out.q.amax();
        if out.residual > PROJECTION_TOL * scale {
            return Err(Error::Numerical(format!(
                "value function not representable by phi (residual {:.3e})",
                out.residual
            )));
        }
        let diff = (&out.q - &q).amax();
        if let Some(pd) = prev_diff {
            if pd > 1e-13 * scale && diff > 1e-13 * scale {
                let ratio = diff / pd;
                if ratio >= 1.0 {
                    return Err(Error::Numerical(format!(
                        "robust backup is not contracting at iteration {it}: ratio {ratio:.6}"
                    )));
                }
                ratios.push(ratio);
            }
        }
        q = out.q;
        if diff <= tol {
            return Ok(ValueIteration {
                q,
                iterations: it,
                ratios,
            });
        }
        prev_diff = Some(diff);
    }
    Err(Error::Numerical(format!(
        "value iteration did not reach tolerance {tol:.1e} in {max_iters} iterations"
    )))
}

/// `argmax_a Q(s, a)` per state, lowest index on ties.
pub fn greedy_policy(q: &DMatrix<f64>) -> Vec<usize> {
    (0..q.nrows())
        .map(|s| {
            let row = q.row(s);
            let mut best = 0;
            for a in 1..row.len() {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Worst-case value of a deterministic policy over the IPM set,
/// `V(s) = r(s, pi(s)) + gamma * (p0(s, pi(s))^T V - delta * ||w_{2:d}(V)||)`.
pub fn robust_policy_value(
    mdp: &LinearRmdp,
    policy: &[usize],
    tol: f64,
    max_iters: usize,
) -> Result<DVector<f64>> {
    if policy.len() != mdp.n_states() || policy.iter().any(|a| *a >= mdp.n_actions()) {
        return Err(Error::contract("policy does not match the MDP"));
    }
    let mut v = DVector::zeros(mdp.n_states());
    for _ in 0..max_iters {
        let (w, residual) = mdp.project_values(&v)?;
        if residual > PROJECTION_TOL * (1.0 + v.amax()) {
            return Err(Error::Numerical(
                "policy value not representable by phi".into(),
            ));
        }
        let penalty = mdp.delta() * norm_without_bias(&w);
        let next = DVector::from_fn(mdp.n_states(), |s, _| {
            let a = policy[s];
            let ev: f64 = mdp
                .p0_row(s, a)
                .iter()
                .zip(v.iter())
                .map(|(p, x)| p * x)
                .sum();
            mdp.reward(s, a) + mdp.gamma() * (ev - penalty)
        });
        let diff = (&next - &v).amax();
        v = next;
        if diff <= tol {
            return Ok(v);
        }
    }
    Err(Error::Numerical(
        "robust policy evaluation did not converge".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionProbe {
    /// `||T Q1 - T Q2||_nu / ||Q1 - Q2||_nu` per random pair.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Analytic modulus `gamma sqrt(|A|) (sqrt(kappa) + delta / sqrt(lambda_min))`.
    pub beta: f64,
    pub lambda_min: f64,
    /// `max_{s'} sum_{s,a} p0(s'|s,a) / |A|`.
    pub kappa: f64,
    pub delta_bound: f64,
}

fn nu_norm(q: &DMatrix<f64>) -> f64 {
    (q.iter().map(|v| v * v).sum::<f64>() / q.len() as f64).sqrt()
}

/// Measures the contraction ratio of the robust backup in the norm weighted
/// by the uniform state-action distribution on `n_pairs` random Q pairs.
///
/// The reported `beta` bounds every ratio: Jensen's inequality bounds the
/// nominal term by `gamma sqrt(kappa |A|)` and the penalty difference is at
/// most `gamma delta ||Δw||` with `||Δw|| <= sqrt(|A|) ||ΔQ|| / sqrt(lambda_min)`.
pub fn contraction_probe(
    mdp: &LinearRmdp,
    n_pairs: usize,
    rng: &mut dyn RngCore,
) -> Result<ContractionProbe> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let lambda_min = mdp.lambda_min(&vec![1.0 / ns as f64; ns])?;
    let kappa = (0..ns)
        .map(|sp| {
            let mut total = 0.0;
            for s in 0..ns {
                for a in 0..na {
                    total += mdp.p0_row(s, a)[sp];
                }
            }
            total / na as f64
        })
        .fold(0.0, f64::max);
    let beta = mdp.gamma() * (na as f64).sqrt() * (kappa.sqrt() + mdp.delta() / lambda_min.sqrt());
    let hi = 1.0 / (1.0 - mdp.gamma());
    let mut ratios = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let q1 = DMatrix::from_fn(ns, na, |_, _| rng.random_range(0.0..hi));
        let q2 = DMatrix::from_fn(ns, na, |_, _| rng.random_range(0.0..hi));
        let t1 = robust_bellman_apply(&q1, mdp)?.q;
        let t2 = robust_bellman_apply(&q2, mdp)?.q;
        ratios.push(nu_norm(&(t1 - t2)) / nu_norm(&(q1 - q2)));
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(ContractionProbe {
        ratios,
        max_ratio,
        beta,
        lambda_min,
        kappa,
        delta_bound: mdp.contraction_delta_bound(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Two states, two actions, hand-picked kernel.
    fn hand_mdp(delta: f64) -> LinearRmdp {
        let p0 = vec![
            0.5, 0.5, // s0 a0
            0.2, 0.8, // s0 a1
            1.0, 0.0, // s1 a0
            0.0, 1.0, // s1 a1
        ];
        LinearRmdp::tabular(2, 2, p0, vec![0.1, 0.0, 0.5, 1.0], 0.5, delta).unwrap()
    }

    #[test]
    fn zero_q_maps_to_rewards() {
        let m = hand_mdp(0.3);
        let out = robust_bellman_apply(&DMatrix::zeros(2, 2), &m).unwrap();
        assert_eq!(out.q, DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.5, 1.0]));
    }

    #[test]
    fn hand_computed_backup() {
        let m = hand_mdp(0.1);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        // V = (2, 4); phi = [[1, 0], [1, 1]] so w = (2, 2) and ||w_2|| = 2
        let out = robust_bellman_apply(&q, &m).unwrap();
        assert!((out.w[0] - 2.0).abs() < 1e-12 && (out.w[1] - 2.0).abs() < 1e-12);
        let pen = 0.1 * 2.0;
        let expected = [
            0.1 + 0.5 * (0.5 * 2.0 + 0.5 * 4.0 - pen),
            0.0 + 0.5 * (0.2 * 2.0 + 0.8 * 4.0 - pen),
            0.5 + 0.5 * (2.0 - pen),
            1.0 + 0.5 * (4.0 - pen),
        ];
        for (i, e) in expected.iter().enumerate() {
            let (s, a) = (i / 2, i % 2);
            assert!(
                (out.q[(s, a)] - e).abs() < 1e-12,
                "({s},{a}) {} vs {e}",
                out.q[(s, a)]
            );
        }
        // zero radius is the ordinary optimality backup
        let plain = robust_bellman_apply(&q, &hand_mdp(0.0)).unwrap();
        assert!((plain.q[(0, 0)] - (0.1 + 0.5 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn two_state_chain_fixed_point() {
        // s0 -> s1 deterministically; s1 absorbing with reward 1
        let p0 = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let gamma = 0.9;
        let m = LinearRmdp::tabular(2, 2, p0, vec![0.0, 0.5, 1.0, 1.0], gamma, 0.0).unwrap();
        let vi = robust_value_iteration(&m, 1e-12, 10_000).unwrap();
        let v1 = 1.0 / (1.0 - gamma);
        assert!((vi.q[(1, 0)] - v1).abs() < 1e-9);
        assert!((vi.q[(0, 0)] - gamma * v1).abs() < 1e-9);
        assert!((vi.q[(0, 1)] - (0.5 + gamma * v1)).abs() < 1e-9);
        assert!(vi.ratios.iter().all(|r| *r < 1.0));
    }

    #[test]
    fn radius_above_bound_is_rejected() {
        let m = hand_mdp(0.0);
        let bad = m.with_delta(m.contraction_delta_bound() * 1.01).unwrap();
        assert!(robust_value_iteration(&bad, 1e-10, 1000).is_err());
    }

    #[test]
    fn larger_radius_never_raises_values() {
        let m = LinearRmdp::random_tabular(4, 2, 0.7, 0.0, 40, &mut seed::rng(5)).unwrap();
        let bound = m.contraction_delta_bound();
        let mut prev: Option<DMatrix<f64>> = None;
        for k in 0..5 {
            let d = bound * k as f64 / 5.0;
            let q = robust_value_iteration(&m.with_delta(d).unwrap(), 1e-12, 10_000)
                .unwrap()
                .q;
            if let Some(p) = &prev {
                assert!(q.iter().zip(p.iter()).all(|(a, b)| *a <= *b + 1e-12));
            }
            prev = Some(q);
        }
    }

    #[test]
    fn policy_value_of_optimal_policy_matches_optimum() {
        let m = LinearRmdp::chain(5, 0.2, 0.9, 1e-3).unwrap();
        let vi = robust_value_iteration(&m, 1e-13, 10_000).unwrap();
        let pi = greedy_policy(&vi.q);
        let v = robust_policy_value(&m, &pi, 1e-13, 10_000).unwrap();
        for s in 0..5 {
            assert!((v[s] - vi.q.row(s).max()).abs() < 1e-9);
        }
        assert_eq!(pi, vec![1; 5]);
    }

    proptest! {
        #[test]
        fn backup_is_monotone(s in 0u64..300, bump in prop::collection::vec(0.0f64..1.0, 8)) {
            // monotone while delta * sqrt(|S| - 1) stays below min p0
            let m = LinearRmdp::random_tabular(4, 2, 0.7, 0.01, 40, &mut seed::rng(s)).unwrap();
            let mut rng = seed::rng(s + 1);
            let q1 = DMatrix::from_fn(4, 2, |_, _| rng.random_range(0.0..3.0));
            let q2 = DMatrix::from_fn(4, 2, |i, j| q1[(i, j)] + bump[i * 2 + j]);
            let t1 = robust_bellman_apply(&q1, &m).unwrap().q;
            let t2 = robust_bellman_apply(&q2, &m).unwrap().q;
            for (a, b) in t1.iter().zip(t2.iter()) {
                prop_assert!(*a <= *b + 1e-12);
            }
        }

        #[test]
        fn contraction_under_the_bound(s in 0u64..200) {
            let mut rng = seed::rng(s);
            let base = LinearRmdp::tabular(
                3, 2,
                (0..18).map(|i| if i % 3 == 0 { 0.34 } else { 0.33 }).collect(),
                (0..6).map(|_| rng.random::<f64>()).collect(),
                0.5, 0.0,
            ).unwrap();
            let m = base.with_delta(0.9 * base.contraction_delta_bound()).unwrap();
            let probe = contraction_probe(&m, 20, &mut rng).unwrap();
            prop_assert!(probe.beta < 1.0);
            prop_assert!(probe.max_ratio <= probe.beta + 1e-12);
        }
    }
}
