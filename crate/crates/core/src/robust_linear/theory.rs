use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::bellman::{contraction_probe, robust_policy_value, robust_value_iteration};
use super::fqi::{robust_fqi, FqiDataset};
use super::oracle::{ipm_inner_min_oracle, LinearValue, OracleOptions};
use super::{norm_without_bias, LinearRmdp};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Row {
    pub instance: usize,
    pub n_states: usize,
    pub d: usize,
    pub delta: f64,
    pub oracle: f64,
    pub closed_form: f64,
    pub abs_err: f64,
    /// Smallest entry of the minimising distribution.
    pub min_q: f64,
}

fn random_features(n_states: usize, d: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
    loop {
        let mut phi = DMatrix::from_element(n_states, d, 1.0);
        for s in 0..n_states {
            let raw: Vec<f64> = (0..d - 1)
                .map(|_| StandardNormal.sample(&mut *rng))
                .collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let target = rng.random_range(0.2..1.0);
            for j in 1..d {
                phi[(s, j)] = raw[j - 1] / norm * target;
            }
        }
        let gram = phi.transpose() * &phi;
        if gram.symmetric_eigenvalues().min() > 1e-3 {
            return phi;
        }
    }
}

fn random_weights(d: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    let mut w = DVector::zeros(d);
    if d > 1 {
        let raw: Vec<f64> = (0..d - 1)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let target = rng.random_range(0.1..0.5);
        for j in 1..d {
            w[j] = raw[j - 1] / norm * target;
        }
    }
    let tail = norm_without_bias(&w);
    // bias large enough to keep values non-negative, small enough for ||w|| <= 1
    w[0] = rng.random_range(tail..(1.0 - tail * tail).sqrt());
    w
}

fn random_distribution(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Compares the inner-minimisation oracle with `p0^T V_w - delta ||w_{2:d}||`
/// on random instances with `|S| <= 6`, `d <= 4`, cycling the radius
/// through `{1e-3, 1e-2, 1e-1}`.
pub fn prop1_suite(n_instances: usize, root_seed: u64) -> Result<Vec<Prop1Row>> {
    let gamma = 0.9;
    let deltas = [1e-3, 1e-2, 1e-1];
    let mut rows = Vec::with_capacity(n_instances);
    for i in 0..n_instances {
        let mut rng = seed::rng(seed::derive_indexed(root_seed, "prop1", i as u64));
        let n_states = rng.random_range(2..=6usize);
        let d = rng.random_range(2..=n_states.min(4));
        let delta = deltas[i % deltas.len()];
        let phi = random_features(n_states, d, &mut rng);
        let w = random_weights(d, &mut rng);
        let value = LinearValue::new(w.clone(), &phi, gamma)?;
        let p0 = random_distribution(n_states, &mut rng);
        let res = ipm_inner_min_oracle(
            &p0,
            &value,
            &phi,
            delta,
            gamma,
            &OracleOptions::default(),
            &mut rng,
        )?;
        let nominal: f64 = p0.iter().zip(value.values.iter()).map(|(p, v)| p * v).sum();
        let closed_form = nominal - delta * norm_without_bias(&w);
        rows.push(Prop1Row {
            instance: i,
            n_states,
            d,
            delta,
            oracle: res.value,
            closed_form,
            abs_err: (res.value - closed_form).abs(),
            min_q: res.q.min(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Report {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub delta: f64,
    pub delta_bound: f64,
    pub lambda_min: f64,
    pub kappa: f64,
    pub beta: f64,
    pub max_ratio: f64,
    #[serde(skip)]
    pub ratios: Vec<f64>,
}

/// Near-uniform kernel: `(1 - spread) / |S| + spread * random`.
fn near_uniform_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    spread: f64,
    rng: &mut dyn RngCore,
) -> Result<LinearRmdp> {
    let mut p0 = Vec::new();
    for _ in 0..n_states * n_actions {
        let r = random_distribution(n_states, rng);
        p0.extend(
            r.iter()
                .map(|x| (1.0 - spread) / n_states as f64 + spread * x),
        );
    }
    let rewards = (0..n_states * n_actions)
        .map(|_| rng.random::<f64>())
        .collect();
    LinearRmdp::tabular(n_states, n_actions, p0, rewards, gamma, 0.0)
}

/// Contraction ratios of the robust backup on random Q pairs, with the
/// radius set to `delta_fraction` of the contraction bound.
pub fn prop2_suite(n_pairs: usize, delta_fraction: f64, root_seed: u64) -> Result<Prop2Report> {
    if !(0.0..1.0).contains(&delta_fraction) {
        return Err(Error::config("delta_fraction must lie in [0, 1)"));
    }
    let mut rng = seed::rng_for(root_seed, "prop2");
    let base = near_uniform_mdp(4, 2, 0.5, 0.1, &mut rng)?;
    let mdp = base.with_delta(delta_fraction * base.contraction_delta_bound())?;
    let probe = contraction_probe(&mdp, n_pairs, &mut rng)?;
    Ok(Prop2Report {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        gamma: mdp.gamma(),
        delta: mdp.delta(),
        delta_bound: probe.delta_bound,
        lambda_min: probe.lambda_min,
        kappa: probe.kappa,
        beta: probe.beta,
        max_ratio: probe.max_ratio,
        ratios: probe.ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FqiRow {
    pub instance: usize,
    pub delta: f64,
    pub sup_err: f64,
    pub fqi_iterations: usize,
    pub vi_iterations: usize,
}

/// Robust FQI on exact-proportion data against robust value iteration.
pub fn fqi_suite(n_mdps: usize, deltas: &[f64], root_seed: u64) -> Result<Vec<FqiRow>> {
    let (quantum, iterations) = (20, 200);
    let mut rows = Vec::new();
    for i in 0..n_mdps {
        let mut rng = seed::rng(seed::derive_indexed(root_seed, "fqi", i as u64));
        let base = LinearRmdp::random_tabular(4, 2, 0.7, 0.0, quantum, &mut rng)?;
        for &delta in deltas {
            let mdp = base.with_delta(delta)?;
            let ds = FqiDataset::exact_proportions(&mdp, quantum)?;
            let out = robust_fqi(&ds, &mdp, delta, iterations)?;
            let vi = robust_value_iteration(&mdp, 1e-13, 100_000)?;
            rows.push(FqiRow {
                instance: i,
                delta,
                sup_err: (&out.f - &vi.q).amax(),
                fqi_iterations: iterations,
                vi_iterations: vi.iterations,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thm1Config {
    pub n_states: usize,
    pub slip: f64,
    pub gamma: f64,
    pub delta: f64,
    pub n_list: Vec<usize>,
    pub t_list: Vec<usize>,
    pub seeds: usize,
    pub root_seed: u64,
}

impl Default for Thm1Config {
    fn default() -> Self {
        Self {
            n_states: 5,
            slip: 0.2,
            gamma: 0.9,
            delta: 1e-3,
            n_list: vec![50, 100, 200, 400, 800],
            t_list: vec![1, 2, 4, 8, 16, 32, 64],
            seeds: 30,
            root_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCell {
    pub n: usize,
    pub t: usize,
    pub mean_gap: f64,
    pub std_err: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thm1Table {
    pub cells: Vec<GapCell>,
}

impl Thm1Table {
    pub fn cell(&self, n: usize, t: usize) -> Option<&GapCell> {
        self.cells.iter().find(|c| c.n == n && c.t == t)
    }
}

/// Suboptimality `V*(rho) - V^{pi_T}(rho)` of robust FQI policies, both
/// evaluated exactly under the worst-case kernel, with `rho` uniform over
/// states. Datasets draw states and actions uniformly.
pub fn theorem1_trend(
    mdp: &LinearRmdp,
    n_list: &[usize],
    t_list: &[usize],
    seeds: usize,
    root_seed: u64,
) -> Result<Thm1Table> {
    let gamma = mdp.gamma();
    if mdp.delta() > 1.0 / (1.0 - gamma) {
        return Err(Error::config("delta must not exceed 1 / (1 - gamma)"));
    }
    if seeds == 0 || n_list.is_empty() || t_list.is_empty() {
        return Err(Error::config(
            "need at least one seed, dataset size and iteration count",
        ));
    }
    let vi = robust_value_iteration(mdp, 1e-12, 100_000)?;
    let v_star = DVector::from_fn(mdp.n_states(), |s, _| vi.q.row(s).max());
    let t_max = *t_list.iter().max().unwrap();
    let mut cells = Vec::new();
    for &n in n_list {
        let mut gaps = vec![Vec::with_capacity(seeds); t_list.len()];
        for k in 0..seeds {
            let mut rng = seed::rng(seed::derive_indexed(
                root_seed,
                &format!("thm1-n{n}"),
                k as u64,
            ));
            let ds = FqiDataset::sample_uniform(mdp, n, &mut rng);
            let out = robust_fqi(&ds, mdp, mdp.delta(), t_max)?;
            for (j, &t) in t_list.iter().enumerate() {
                let v_pi = robust_policy_value(mdp, &out.policies[t], 1e-12, 100_000)?;
                gaps[j].push((&v_star - v_pi).mean());
            }
        }
        for (j, &t) in t_list.iter().enumerate() {
            let g = &gaps[j];
            let m = g.iter().sum::<f64>() / g.len() as f64;
            let var = if g.len() > 1 {
                g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (g.len() - 1) as f64
            } else {
                0.0
            };
            cells.push(GapCell {
                n,
                t,
                mean_gap: m,
                std_err: (var / g.len() as f64).sqrt(),
                seeds: g.len(),
            });
        }
    }
    Ok(Thm1Table { cells })
}

pub fn thm1_suite(cfg: &Thm1Config) -> Result<Thm1Table> {
    let mdp = LinearRmdp::chain(cfg.n_states, cfg.slip, cfg.gamma, cfg.delta)?;
    theorem1_trend(&mdp, &cfg.n_list, &cfg.t_list, cfg.seeds, cfg.root_seed)
}

/// Writes any serialisable rows as CSV with a header.
pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prop1_rows_agree() {
        let rows = prop1_suite(6, 1).unwrap();
        for r in &rows {
            assert!(r.abs_err < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn prop2_report_is_consistent() {
        let r = prop2_suite(20, 0.9, 3).unwrap();
        assert!(r.delta < r.delta_bound);
        assert!(r.beta < 1.0);
        assert!(r.max_ratio <= r.beta);
        assert_eq!(r.ratios.len(), 20);
    }

    #[test]
    fn thm1_gap_is_non_negative_and_shrinks_with_iterations() {
        let cfg = Thm1Config {
            n_list: vec![400],
            t_list: vec![1, 32],
            seeds: 5,
            ..Default::default()
        };
        let table = thm1_suite(&cfg).unwrap();
        for c in &table.cells {
            assert!(c.mean_gap >= -1e-9);
        }
        assert!(table.cell(400, 32).unwrap().mean_gap < table.cell(400, 1).unwrap().mean_gap);
    }

    #[test]
    fn rows_serialise_with_header() {
        let rows = fqi_suite(1, &[0.0], 0).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("instance,delta,sup_err,fqi_iterations,vi_iterations\n"));
    }
}
