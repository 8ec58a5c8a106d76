//! End-to-end acceptance checks. Every check prints one PASS/FAIL line to
//! stderr (uncaptured) and then asserts.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use adload_core::agents::{train_offline, AgentConfig, Variant};
use adload_core::dataset::OfflineDataset;
use adload_core::distill::DistillReport;
use adload_core::env::PerturbParam;
use adload_core::experiments::{
    collect_cartpole, collect_session, confounding_ablation, distill_study, robustness_study,
    session_comparison, train_expert, CartpoleRecipe, ConfoundingResult, RobustnessStudy,
    SessionComparison, SessionRecipe, SessionSplits,
};
use adload_core::neural::{HeadKind, QNetwork};
use adload_core::robust_linear::{
    fqi_suite, prop1_suite, prop2_suite, thm1_suite, GapCell, Thm1Config,
};
use adload_core::seed;
use adload_core::uplift::{cost_curve, ranked_units, TLearner, UpliftModel};
use adload_core::ScoreMode;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{tag} [{id:02}] {name}: {detail}");
}

fn check(id: u32, name: &str, pass: bool, detail: String) {
    report(id, name, pass, &detail);
    assert!(pass, "[{id:02}] {name}: {detail}");
}

const SESSION_SEEDS: u64 = 5;
const CARTPOLE_TRAIN_SEEDS: u64 = 10;
const CARTPOLE_EPISODES: usize = 30;
const SWEEP_ROOT: u64 = 2024;

struct CartpoleArtifacts {
    study: RobustnessStudy,
}

fn cartpole() -> &'static CartpoleArtifacts {
    static CELL: OnceLock<CartpoleArtifacts> = OnceLock::new();
    CELL.get_or_init(|| {
        let recipe = CartpoleRecipe::default();
        let (expert, _) = train_expert(&recipe).expect("expert training");
        let ds = collect_cartpole(&recipe, Arc::new(expert)).expect("collection");
        let seeds: Vec<u64> = (0..CARTPOLE_TRAIN_SEEDS).collect();
        let study = robustness_study(
            &recipe,
            &ds,
            &[Variant::Dueling, Variant::RobustDueling],
            &seeds,
            CARTPOLE_EPISODES,
            1,
            SWEEP_ROOT,
        )
        .expect("robustness study");
        CartpoleArtifacts { study }
    })
}

struct SessionRun {
    comparison: SessionComparison,
    confounding: ConfoundingResult,
    distill: DistillReport,
}

fn session_runs() -> &'static Vec<SessionRun> {
    static CELL: OnceLock<Vec<SessionRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        let recipe = SessionRecipe::default();
        (0..SESSION_SEEDS)
            .map(|s| {
                let ds = collect_session(&recipe, s).expect("session corpus");
                let splits = SessionSplits::new(&ds, &recipe, s).expect("splits");
                SessionRun {
                    comparison: session_comparison(&recipe, &splits, s).expect("comparison"),
                    confounding: confounding_ablation(&recipe, &splits, Variant::Dqn, s)
                        .expect("ablation"),
                    distill: distill_study(&recipe, &splits, Variant::Dqn, s)
                        .expect("distillation"),
                }
            })
            .collect()
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn a01_closed_form_inner_minimum_matches_oracle() {
    let rows = prop1_suite(24, 7).unwrap();
    let worst = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    let pass = rows.len() >= 20 && worst <= 1e-6;
    check(
        1,
        "closed-form inner minimum",
        pass,
        format!("{} instances, max |err| {worst:.3e} (tol 1e-6)", rows.len()),
    );
}

#[test]
fn a02_robust_backup_contracts() {
    let r = prop2_suite(100, 0.5, 11).unwrap();
    let pass = r.ratios.len() == 100 && r.beta < 1.0 && r.max_ratio <= r.beta;
    check(
        2,
        "robust backup contraction",
        pass,
        format!(
            "100 pairs, max ratio {:.6} <= beta {:.6} < 1",
            r.max_ratio, r.beta
        ),
    );
}

#[test]
fn a03_fqi_reaches_robust_fixed_point() {
    let rows = fqi_suite(3, &[0.0, 1e-2], 5).unwrap();
    let worst = rows.iter().map(|r| r.sup_err).fold(0.0, f64::max);
    let pass = rows.len() == 6 && worst <= 1e-3;
    check(
        3,
        "FQI fixed point",
        pass,
        format!("3 MDPs x delta {{0, 1e-2}}, max sup err {worst:.3e} (tol 1e-3)"),
    );
}

/// Standard error of the difference of two cell means.
fn diff_se(a: &GapCell, b: &GapCell) -> f64 {
    a.std_err.hypot(b.std_err)
}

#[test]
fn a04_suboptimality_shrinks_with_iterations_and_data() {
    let cfg = Thm1Config::default();
    let table = thm1_suite(&cfg).unwrap();
    let mut violations = Vec::new();
    for &n in &cfg.n_list {
        for w in cfg.t_list.windows(2) {
            let (a, b) = (table.cell(n, w[0]).unwrap(), table.cell(n, w[1]).unwrap());
            if b.mean_gap > a.mean_gap + 2.0 * diff_se(a, b) {
                violations.push(format!(
                    "N={n} T {}->{}: {:.4} -> {:.4}",
                    w[0], w[1], a.mean_gap, b.mean_gap
                ));
            }
        }
    }
    for &t in &cfg.t_list {
        for &n in &cfg.n_list {
            let Some(b) = table.cell(2 * n, t) else {
                continue;
            };
            let a = table.cell(n, t).unwrap();
            if b.mean_gap > a.mean_gap + 2.0 * diff_se(a, b) {
                violations.push(format!(
                    "T={t} N {n}->{}: {:.4} -> {:.4}",
                    2 * n,
                    a.mean_gap,
                    b.mean_gap
                ));
            }
        }
    }
    let first = table.cell(cfg.n_list[0], cfg.t_list[0]).unwrap().mean_gap;
    let last = table
        .cell(*cfg.n_list.last().unwrap(), *cfg.t_list.last().unwrap())
        .unwrap()
        .mean_gap;
    let pass = cfg.seeds >= 20 && violations.is_empty();
    check(
        4,
        "suboptimality trend",
        pass,
        format!("{} seeds, gap {first:.4} at smallest (N,T) -> {last:.4} at largest, violations {violations:?}", cfg.seeds),
    );
}

fn loss(net: &QNetwork, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    (&net.forward(x).unwrap().q * c).sum()
}

#[test]
fn a05_backprop_matches_finite_differences() {
    let mut rng = seed::rng(99);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let input = rng.random_range(2..8usize);
        let depth = rng.random_range(1..=3usize);
        let mut widths = vec![input];
        widths.extend((0..depth).map(|_| rng.random_range(3..24usize)));
        let n_actions = rng.random_range(2..5usize);
        let mut net = QNetwork::new(&widths, n_actions, HeadKind::Dueling, &mut rng).unwrap();
        let batch = rng.random_range(1..9usize);
        let x = Array2::from_shape_fn((batch, input), |_| StandardNormal.sample(&mut rng));
        let c = Array2::from_shape_fn((batch, n_actions), |_| StandardNormal.sample(&mut rng));
        // glorot leaves biases at zero, and a row with every ReLU dead then
        // sits exactly on the next layer's kink; draw all parameters instead
        let generic: Vec<f64> = (0..net.param_count())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            })
            .collect();
        net.set_params_flat(&generic).unwrap();
        let (_, cache) = net.forward_cached(&x).unwrap();
        let grad = net.backward(&cache, &c).unwrap().flat();
        let theta = net.params_flat();
        let dir: Vec<f64> = (0..theta.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let shifted = |s: f64| {
            theta
                .iter()
                .zip(&dir)
                .map(|(t, d)| t + s * d)
                .collect::<Vec<_>>()
        };
        net.set_params_flat(&shifted(h)).unwrap();
        let up = loss(&net, &x, &c);
        net.set_params_flat(&shifted(-h)).unwrap();
        let down = loss(&net, &x, &c);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    check(
        5,
        "gradient fidelity",
        worst < 1e-4,
        format!("50 probes, max relative error {worst:.3e} (tol 1e-4)"),
    );
}

#[test]
fn a06_zero_radius_robust_equals_dueling() {
    let recipe = SessionRecipe {
        n_samples: 5_000,
        ..SessionRecipe::default()
    };
    let ds: OfflineDataset = collect_session(&recipe, 3).unwrap();
    let cfg = AgentConfig {
        delta: 0.0,
        train_steps: 1_000,
        seed: 4,
        ..recipe.agent.clone()
    };
    let dueling = train_offline(&ds, &cfg, Variant::Dueling).unwrap();
    let robust = train_offline(&ds, &cfg, Variant::RobustDueling).unwrap();
    let diff = dueling
        .online
        .params_flat()
        .iter()
        .zip(robust.online.params_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        6,
        "zero-radius equivalence",
        diff <= 1e-10,
        format!("1000 steps, max |param diff| {diff:.3e} (tol 1e-10)"),
    );
}

fn nominal_for(study: &RobustnessStudy, variant: Variant, train_seed: u64) -> Vec<f64> {
    study
        .sweeps
        .iter()
        .filter(|s| s.variant == variant && s.train_seed == train_seed)
        .map(|s| s.result.nominal_point().mean)
        .collect()
}

#[test]
fn a07_offline_dueling_balances_cartpole() {
    let study = &cartpole().study;
    let nominal = nominal_for(study, Variant::Dueling, 0);
    let score = nominal[0];
    let above = (0..CARTPOLE_TRAIN_SEEDS)
        .filter(|&s| nominal_for(study, Variant::Dueling, s)[0] >= 400.0)
        .count();
    check(
        7,
        "cartpole competence",
        score >= 400.0,
        format!(
            "dueling train seed 0 mean return {score:.1} over {CARTPOLE_EPISODES} episodes (need >= 400); {above}/{CARTPOLE_TRAIN_SEEDS} seeds reach 400"
        ),
    );
}

#[test]
fn a08_robust_variant_degrades_less() {
    let study = &cartpole().study;
    let mut pass = true;
    let mut parts = Vec::new();
    for param in PerturbParam::ALL {
        let (dn, dh) = study.nominal_and_harshest(Variant::Dueling, param).unwrap();
        let (rn, rh) = study
            .nominal_and_harshest(Variant::RobustDueling, param)
            .unwrap();
        let ok = rh >= dh && (rn - rh) < (dn - dh);
        pass &= ok;
        parts.push(format!(
            "{param}: harsh robust {rh:.1} vs dueling {dh:.1}, drop {:.1} vs {:.1}{}",
            rn - rh,
            dn - dh,
            if ok { "" } else { " (miss)" }
        ));
    }
    check(
        8,
        "perturbation robustness",
        pass,
        format!(
            "{CARTPOLE_TRAIN_SEEDS} seeds x {CARTPOLE_EPISODES} episodes; {}",
            parts.join("; ")
        ),
    );
}

#[test]
fn a09_agents_beat_tlearner() {
    let runs = session_runs();
    let robust = mean(runs.iter().map(|r| r.comparison.drift_robust));
    let dueling = mean(runs.iter().map(|r| r.comparison.drift_dueling));
    let tl = mean(runs.iter().map(|r| r.comparison.drift_tlearner));
    let dqn = mean(runs.iter().map(|r| r.comparison.iid_dqn));
    let itl = mean(runs.iter().map(|r| r.comparison.iid_tlearner));
    let pass = robust >= dueling && dueling - tl >= 0.01 && dqn - itl >= 0.01;
    check(
        9,
        "uplift ranking vs T-learner",
        pass,
        format!(
            "{SESSION_SEEDS} seeds; drift robust {robust:.4} >= dueling {dueling:.4} (gap {:+.4}), dueling - T-learner {tl:.4} = {:+.4} (need >= 0.01); iid DQN {dqn:.4} - T-learner {itl:.4} = {:+.4} (need >= 0.01)",
            robust - dueling,
            dueling - tl,
            dqn - itl
        ),
    );
}

#[test]
fn a10_previous_action_channel_matters() {
    let runs = session_runs();
    let with = mean(runs.iter().map(|r| r.confounding.with_channel));
    let without = mean(runs.iter().map(|r| r.confounding.without_channel));
    check(
        10,
        "confounding channel",
        with - without >= 0.01,
        format!("{SESSION_SEEDS} seeds; with {with:.4}, without {without:.4}, margin {:+.4} (need >= 0.01)", with - without),
    );
}

#[test]
fn a11_distilled_tree_keeps_teacher_quality() {
    let runs = session_runs();
    let ok = runs
        .iter()
        .filter(|r| {
            r.distill.student >= 0.9 * r.distill.teacher && r.distill.student > r.distill.baseline
        })
        .count();
    let teacher = mean(runs.iter().map(|r| r.distill.teacher));
    let student = mean(runs.iter().map(|r| r.distill.student));
    let baseline = mean(runs.iter().map(|r| r.distill.baseline));
    check(
        11,
        "distillation",
        ok == runs.len(),
        format!(
            "{ok}/{} seeds with student >= 0.9 x teacher and > baseline; means teacher {teacher:.4}, student {student:.4}, baseline {baseline:.4}",
            runs.len()
        ),
    );
}

#[test]
fn a12_aucc_properties() {
    let recipe = SessionRecipe::default();
    let ds = collect_session(&recipe, 0).unwrap();
    let states: Vec<&[f64]> = ds
        .transitions()
        .iter()
        .map(|t| t.state.as_slice())
        .collect();
    let model = TLearner::fit(&ds, recipe.tree).unwrap();
    let scores = model.score(&states, ScoreMode::Combined, 1.0).unwrap();
    let base = cost_curve(&ranked_units(&ds, &scores).unwrap(), 100)
        .unwrap()
        .aucc;
    let transformed: Vec<f64> = scores
        .iter()
        .map(|s| (2.0 * s).exp() + s.powi(3) + 5.0)
        .collect();
    let moved = cost_curve(&ranked_units(&ds, &transformed).unwrap(), 100)
        .unwrap()
        .aucc;
    let invariant = (base - moved).abs() <= 1e-12;

    let mut rng = seed::rng(12);
    let randoms: Vec<f64> = (0..20)
        .map(|_| {
            let s: Vec<f64> = (0..ds.len()).map(|_| rng.random::<f64>()).collect();
            cost_curve(&ranked_units(&ds, &s).unwrap(), 100)
                .unwrap()
                .aucc
        })
        .collect();
    let spread = randoms.iter().map(|a| (a - 0.5).abs()).fold(0.0, f64::max);
    let random_ok = spread <= 0.03;

    let single = cost_curve(&ranked_units(&ds, &scores).unwrap(), 1)
        .unwrap()
        .aucc;
    let single_ok = single == 0.5;
    check(
        12,
        "AUCC properties",
        invariant && random_ok && single_ok,
        format!(
            "monotone transform {base:.6} vs {moved:.6}; 20 random rankings max |aucc - 0.5| {spread:.4} (tol 0.03); one bucket {single}"
        ),
    );
}
