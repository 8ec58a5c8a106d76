use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// `V_w = phi w` with `||w|| <= 1` and values inside `[0, 1 / (1 - gamma)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearValue {
    pub w: DVector<f64>,
    pub values: DVector<f64>,
}

impl LinearValue {
    pub fn new(w: DVector<f64>, phi: &DMatrix<f64>, gamma: f64) -> Result<Self> {
        if w.len() != phi.ncols() {
            return Err(Error::Dimension {
                expected: phi.ncols(),
                got: w.len(),
            });
        }
        if w.norm() > 1.0 + 1e-12 {
            return Err(Error::contract(format!("||w|| = {} exceeds 1", w.norm())));
        }
        let values = phi * &w;
        let hi = 1.0 / (1.0 - gamma);
        if values.iter().any(|v| *v < -1e-12 || *v > hi + 1e-12) {
            return Err(Error::contract("linear value leaves [0, 1/(1-gamma)]"));
        }
        Ok(Self { w, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once the projected gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 5_000,
            grad_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `min q^T V` over the uncertainty set.
    pub value: f64,
    /// The minimising distribution (sums to 1; may leave the simplex when
    /// `delta` is large relative to `min p0`).
    pub q: DVector<f64>,
    /// Worst-case rate `sup (-Δ^T V) / IPM(Δ)` over zero-sum directions.
    pub rate: f64,
    /// Projected-gradient norm at the returned direction. Near zero unless
    /// the optimum sits on a kink of the value-class clamp.
    pub grad_residual: f64,
    /// `IPM(q - p0) - delta`; zero when the constraint is tight.
    pub constraint_residual: f64,
}

/// `sup_{u in U} c^T u` with `U = {||u|| <= 1, range(phi u) <= span}` by
/// projected gradient ascent that rejects steps leaving `U`. Returns the
/// maximiser. The range condition is the value-class clamp taken modulo a
/// constant shift, which the IPM cannot see because `Δ` sums to zero.
fn ipm_support(c: &DVector<f64>, phi: &DMatrix<f64>, span: f64) -> DVector<f64> {
    let cn = c.norm();
    let mut u = DVector::zeros(c.len());
    if cn == 0.0 {
        return u;
    }
    let feasible = |u: &DVector<f64>| {
        let v = phi * u;
        v.max() - v.min() <= span + 1e-12
    };
    let mut eta = 1e3 / cn;
    for _ in 0..500 {
        let mut cand = &u + c * eta;
        let n = cand.norm();
        if n > 1.0 {
            cand /= n;
        }
        if feasible(&cand) && c.dot(&cand) > c.dot(&u) + 1e-16 {
            u = cand;
        } else {
            eta *= 0.5;
            if eta * cn < 1e-14 {
                break;
            }
        }
    }
    u
}

struct Problem<'a> {
    phi: &'a DMatrix<f64>,
    v: &'a DVector<f64>,
    span: f64,
}

impl Problem<'_> {
    /// `(h, grad h, ipm)` at a zero-sum direction.
    fn eval(&self, d: &DVector<f64>) -> (f64, DVector<f64>, f64) {
        let c = self.phi.transpose() * d;
        let u = ipm_support(&c, self.phi, self.span);
        let g = c.dot(&u);
        if g <= 1e-300 {
            return (0.0, DVector::zeros(d.len()), 0.0);
        }
        let h = -d.dot(self.v) / g;
        // Danskin: grad g = phi u*
        let grad = -(self.v + (self.phi * &u) * h) / g;
        (h, grad, g)
    }
}

fn zero_sum(x: &DVector<f64>) -> DVector<f64> {
    let m = x.mean();
    x.map(|v| v - m)
}

/// Numerically solves `min q^T V` subject to `IPM(q, p0) <= delta` and
/// `sum q = 1` over the value class of `phi`.
///
/// The program is rewritten as `p0^T V - delta * rate`, where `rate`
/// maximises `(-Δ^T V) / IPM(Δ)` over zero-sum directions `Δ`. That ratio
/// is scale free, so it is maximised on the unit sphere of the zero-sum
/// subspace by normalised projected gradient ascent with backtracking from
/// several random starts. `IPM(Δ)` itself is evaluated by an inner
/// projected-gradient solve.
pub fn ipm_inner_min_oracle(
    p0_row: &[f64],
    value: &LinearValue,
    phi: &DMatrix<f64>,
    delta: f64,
    gamma: f64,
    opts: &OracleOptions,
    rng: &mut dyn RngCore,
) -> Result<OracleResult> {
    let n = p0_row.len();
    if phi.nrows() != n || value.values.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: phi.nrows(),
        });
    }
    if !(delta >= 0.0) {
        return Err(Error::config("delta must be >= 0"));
    }
    let p0 = DVector::from_column_slice(p0_row);
    let nominal = p0.dot(&value.values);
    let problem = Problem {
        phi,
        v: &value.values,
        span: 1.0 / (1.0 - gamma),
    };
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let mut worst_residual: f64 = 0.0;
    for _ in 0..opts.restarts.max(1) {
        let raw = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
        let mut d = zero_sum(&raw);
        if d.norm() == 0.0 {
            continue;
        }
        d /= d.norm();
        let (mut h, mut grad, _) = problem.eval(&d);
        let mut eta = 1.0;
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..opts.max_iters {
            let pg = zero_sum(&grad);
            let tangent = &pg - &d * pg.dot(&d);
            residual = tangent.norm();
            if residual < opts.grad_tol {
                converged = true;
                break;
            }
            let dir = &tangent / residual;
            let mut accepted = false;
            while eta > 1e-16 {
                let mut cand = &d + &dir * eta;
                cand = zero_sum(&cand);
                cand /= cand.norm();
                let (hc, gc, _) = problem.eval(&cand);
                if hc > h {
                    d = cand;
                    h = hc;
                    grad = gc;
                    accepted = true;
                    eta = (eta * 2.0).min(1.0);
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                // no ascent step at any resolution: stationary, possibly at a kink
                converged = true;
                break;
            }
        }
        if !converged {
            worst_residual = worst_residual.max(residual);
            continue;
        }
        if best.as_ref().map_or(true, |(bh, _, _)| h > *bh) {
            best = Some((h, d, residual));
        }
    }
    let (rate, dir, grad_residual) = best.ok_or_else(|| {
        Error::Numerical(format!(
            "inner minimisation did not converge in {} iterations: gradient residual {worst_residual:.3e}",
            opts.max_iters
        ))
    })?;
    // the worst case is at rate >= 0 (Δ = 0 is always feasible)
    let rate = rate.max(0.0);
    let (_, _, g) = problem.eval(&dir);
    let q = if g > 0.0 && rate > 0.0 {
        &p0 + &dir * (delta / g)
    } else {
        p0.clone()
    };
    let constraint_residual = if delta > 0.0 && rate > 0.0 {
        let (_, _, gq) = problem.eval(&(&q - &p0));
        gq - delta
    } else {
        0.0
    };
    Ok(OracleResult {
        value: nominal - delta * rate,
        q,
        rate,
        grad_residual,
        constraint_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust_linear::{norm_without_bias, tabular_phi};
    use crate::seed;

    fn phi3() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.5, 0.0, 1.0, -0.3, 0.4, 1.0, 0.0, -0.6, 1.0, 0.2, 0.2],
        )
    }

    #[test]
    fn zero_radius_returns_nominal_expectation() {
        let phi = phi3();
        let v = LinearValue::new(DVector::from_vec(vec![0.8, 0.3, -0.2]), &phi, 0.9).unwrap();
        let p0 = [0.1, 0.2, 0.3, 0.4];
        let r = ipm_inner_min_oracle(
            &p0,
            &v,
            &phi,
            0.0,
            0.9,
            &OracleOptions::default(),
            &mut seed::rng(0),
        )
        .unwrap();
        let nominal: f64 = p0.iter().zip(v.values.iter()).map(|(p, x)| p * x).sum();
        assert_eq!(r.value, nominal);
    }

    #[test]
    fn constant_value_has_no_penalty() {
        let phi = phi3();
        let v = LinearValue::new(DVector::from_vec(vec![0.7, 0.0, 0.0]), &phi, 0.9).unwrap();
        for delta in [1e-3, 1e-1, 0.5] {
            let r = ipm_inner_min_oracle(
                &[0.25; 4],
                &v,
                &phi,
                delta,
                0.9,
                &OracleOptions::default(),
                &mut seed::rng(1),
            )
            .unwrap();
            assert!((r.value - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_penalised_expectation_on_fixed_instance() {
        let phi = phi3();
        let w = DVector::from_vec(vec![0.8, 0.3, -0.2]);
        let v = LinearValue::new(w.clone(), &phi, 0.9).unwrap();
        let p0 = [0.1, 0.2, 0.3, 0.4];
        let r = ipm_inner_min_oracle(
            &p0,
            &v,
            &phi,
            0.05,
            0.9,
            &OracleOptions::default(),
            &mut seed::rng(2),
        )
        .unwrap();
        let nominal: f64 = p0.iter().zip(v.values.iter()).map(|(p, x)| p * x).sum();
        assert!((r.value - (nominal - 0.05 * norm_without_bias(&w))).abs() < 1e-9);
        assert!(r.constraint_residual.abs() < 1e-9);
        assert!((r.q.sum() - 1.0).abs() < 1e-12);
        // the minimiser achieves the reported value
        assert!((r.q.dot(&v.values) - r.value).abs() < 1e-9);
    }

    #[test]
    fn tight_clamp_only_enlarges_the_set() {
        // with a small span the value class shrinks, the IPM ball grows and
        // the worst case can only get worse
        let phi = tabular_phi(3);
        let w = DVector::from_vec(vec![0.5, 0.4, -0.3]);
        let v = LinearValue::new(w.clone(), &phi, 0.0).unwrap();
        let p0 = [0.3, 0.3, 0.4];
        let loose = ipm_inner_min_oracle(
            &p0,
            &v,
            &phi,
            0.05,
            0.9,
            &OracleOptions::default(),
            &mut seed::rng(4),
        )
        .unwrap();
        let tight = ipm_inner_min_oracle(
            &p0,
            &v,
            &phi,
            0.05,
            0.0,
            &OracleOptions::default(),
            &mut seed::rng(4),
        )
        .unwrap();
        assert!(tight.value <= loose.value + 1e-9);
    }

    #[test]
    fn value_class_checks() {
        let phi = phi3();
        assert!(LinearValue::new(DVector::from_vec(vec![1.0, 1.0, 0.0]), &phi, 0.9).is_err());
        assert!(LinearValue::new(DVector::from_vec(vec![0.0, 0.9, 0.0]), &phi, 0.9).is_err());
        assert!(LinearValue::new(DVector::from_vec(vec![0.5, 0.0]), &phi, 0.9).is_err());
    }
}
