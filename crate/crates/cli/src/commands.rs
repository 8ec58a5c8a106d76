//! Single-step subcommands, plus the file helpers the pipeline shares.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use adload_core::agents::{train_offline, AgentConfig, OnlineConfig, TrainedAgent};
use adload_core::dataset::{collect as rollout, read_orld, write_csv, write_orld, BehaviorPolicy, OfflineDataset};
use adload_core::distill::{distill_ablation, fit_student, TreeParams};
use adload_core::env::{CartPole, CartPolePhysics, EnvKind, SessionEnvConfig};
use adload_core::experiments::{collect_cartpole, collect_session, train_expert, CartpoleRecipe, SessionRecipe};
use adload_core::robust_linear::{fqi_suite, prop1_suite, prop2_suite, thm1_suite, write_rows};
use adload_core::uplift::{evaluate_model, perturb_sweep, write_curve_csv, write_sweep_csv, ObjectivePair, TLearner, UpliftModel};
use adload_core::{seed, ScoreMode};
use serde::Serialize;

use crate::config::TheorySection;
use crate::error::CliError;
use crate::{CollectArgs, DistillArgs, EvalArgs, Suite, SweepArgs, TheoryArgs, TrainArgs};

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let f = File::create(path).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    let f = File::open(path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

fn with_path<T>(path: &Path, r: adload_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    })
}

pub fn read_dataset(path: &Path) -> Result<OfflineDataset, CliError> {
    with_path(path, read_orld(open(path)?))
}

pub fn write_dataset(ds: &OfflineDataset, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_orld(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv(ds: &OfflineDataset, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_csv(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_agent(path: &Path) -> Result<TrainedAgent, CliError> {
    with_path(path, TrainedAgent::load(open(path)?))
}

pub fn write_agent(agent: &TrainedAgent, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    agent.save(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Serialisable rows to a CSV file with a header.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_rows(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// Everything a corpus depends on. Collection, expert training and the
/// pipeline's collect stage all derive their streams from `root_seed`.
pub struct CorpusSpec<'a> {
    pub env: EnvKind,
    pub n_samples: usize,
    pub epsilon: f64,
    pub physics: CartPolePhysics,
    pub session: SessionEnvConfig,
    pub expert: &'a OnlineConfig,
    pub root_seed: u64,
}

/// Returns the corpus and, for CartPole, the expert that was trained for it
/// (`None` when `expert` was supplied).
pub fn build_corpus(spec: &CorpusSpec<'_>, expert: Option<TrainedAgent>) -> Result<(OfflineDataset, Option<TrainedAgent>), CliError> {
    match spec.env {
        EnvKind::Cartpole => {
            let recipe = CartpoleRecipe {
                physics: spec.physics,
                expert: OnlineConfig {
                    seed: seed::derive(spec.root_seed, "expert"),
                    ..spec.expert.clone()
                },
                n_samples: spec.n_samples,
                epsilon: spec.epsilon,
                collect_seed: seed::derive(spec.root_seed, "collect"),
                agent: AgentConfig::default(),
            };
            if spec.epsilon >= 1.0 {
                // fully random behaviour; no expert needed
                let mut env = CartPole::new(spec.physics)?;
                let mut rng = seed::rng_for(recipe.collect_seed, "cartpole-collect");
                return Ok((rollout(&mut env, &BehaviorPolicy::uniform(), spec.n_samples, &mut rng)?, None));
            }
            let (expert, trained) = match expert {
                Some(e) => (e, false),
                None => {
                    let (e, report) = train_expert(&recipe)?;
                    log::info!("expert best evaluation return {:.1}", report.best_return);
                    (e, true)
                }
            };
            let shared = Arc::new(expert);
            let ds = collect_cartpole(&recipe, shared.clone())?;
            let expert = Arc::try_unwrap(shared).expect("collection releases the expert");
            Ok((ds, trained.then_some(expert)))
        }
        EnvKind::Session => {
            let recipe = SessionRecipe {
                env: spec.session,
                n_samples: spec.n_samples,
                ..SessionRecipe::default()
            };
            Ok((collect_session(&recipe, seed::derive(spec.root_seed, "collect"))?, None))
        }
    }
}

pub fn collect(a: &CollectArgs) -> Result<(), CliError> {
    let expert_cfg = OnlineConfig::default();
    let spec = CorpusSpec {
        env: a.env,
        n_samples: a.n,
        epsilon: a.epsilon,
        physics: CartPolePhysics::default(),
        session: SessionEnvConfig::default(),
        expert: &expert_cfg,
        root_seed: a.seed,
    };
    if a.n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&a.epsilon) {
        return Err(CliError::Config("--epsilon must lie in [0, 1]".into()));
    }
    let expert = match &a.expert {
        Some(p) if a.env == EnvKind::Cartpole => Some(read_agent(p)?),
        Some(_) => return Err(CliError::Config("--expert only applies to cartpole".into())),
        None => None,
    };
    let (ds, _) = build_corpus(&spec, expert)?;
    write_dataset(&ds, &a.out)?;
    if let Some(csv) = &a.csv {
        write_dataset_csv(&ds, csv)?;
    }
    println!("{} transitions in {} episodes -> {}", ds.len(), ds.episode_ids().len(), a.out.display());
    Ok(())
}

/// The `[agent]` table of a TOML file, defaults elsewhere.
fn agent_section(path: &Path) -> Result<AgentConfig, CliError> {
    #[derive(serde::Deserialize)]
    struct OnlyAgent {
        #[serde(default)]
        agent: AgentConfig,
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let agent = table.get("agent").cloned().map(|v| {
        let mut t = toml::Table::new();
        t.insert("agent".into(), v);
        t
    });
    match agent {
        Some(t) => Ok(t.try_into::<OnlyAgent>().map_err(|e| CliError::Config(e.to_string()))?.agent),
        None => Ok(AgentConfig::default()),
    }
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => agent_section(p)?,
        None => AgentConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = &a.$flag { cfg.$field = v.clone(); })*};
    }
    set!(gamma => gamma, delta => delta, alpha => alpha, objective => objective, steps => train_steps,
        lr => lr, batch => batch_size, sync => target_sync_every, hidden => hidden);
    if a.center_rewards {
        cfg.center_rewards = true;
    }
    cfg.seed = a.seed;
    cfg.validate()?;
    let ds = read_dataset(&a.data)?;
    let agent = train_offline(&ds, &cfg, a.variant)?;
    write_agent(&agent, &a.out)?;
    let tail = agent.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!("{} trained for {} steps, final loss {tail:.6} -> {}", a.variant, cfg.train_steps, a.out.display());
    Ok(())
}

/// A scalarized agent, or a revenue/engagement pair.
pub fn load_model(single: Option<&Path>, rev: Option<&Path>, eng: Option<&Path>, mode: ScoreMode) -> Result<Box<dyn UpliftModel>, CliError> {
    match (single, rev, eng) {
        (Some(p), None, None) => {
            if mode == ScoreMode::Sensitivity {
                return Err(CliError::Config(
                    "sensitivity mode needs separate revenue and engagement agents".into(),
                ));
            }
            Ok(Box::new(read_agent(p)?))
        }
        (None, Some(r), Some(e)) => Ok(Box::new(ObjectivePair::new(read_agent(r)?, read_agent(e)?)?)),
        _ => Err(CliError::Config(
            "give one scalarized agent or both a revenue and an engagement agent".into(),
        )),
    }
}

pub fn eval_aucc(a: &EvalArgs) -> Result<(), CliError> {
    let data = read_dataset(&a.data)?;
    let model: Box<dyn UpliftModel> = match &a.tlearner {
        Some(train) => {
            let params = TreeParams::new(a.depth, a.min_leaf);
            params.validate()?;
            Box::new(TLearner::fit(&read_dataset(train)?, params)?)
        }
        None => load_model(a.agent.as_deref(), a.revenue_agent.as_deref(), a.engagement_agent.as_deref(), a.mode)?,
    };
    let curve = evaluate_model(model.as_ref(), &data, a.mode, a.alpha, a.buckets)?;
    let mut w = create(&a.out)?;
    write_curve_csv(&curve, &mut w)?;
    w.flush()?;
    println!("aucc {:.6}", curve.aucc);
    Ok(())
}

pub fn sweep_perturb(a: &SweepArgs) -> Result<(), CliError> {
    let agent = read_agent(&a.agent)?;
    let result = perturb_sweep(&agent, &CartPolePhysics::default(), a.param, &a.grid, a.episodes, a.seeds, a.seed)?;
    let mut w = create(&a.out)?;
    write_sweep_csv(&result, &mut w)?;
    w.flush()?;
    for p in &result.points {
        println!("{} = {}: mean {:.1} std {:.1}", a.param, p.param_value, p.mean, p.std);
    }
    Ok(())
}

pub fn distill(a: &DistillArgs) -> Result<(), CliError> {
    let teacher = load_model(a.teacher.as_deref(), a.revenue_teacher.as_deref(), a.engagement_teacher.as_deref(), a.mode)?;
    let params = TreeParams::new(a.depth, a.min_leaf);
    params.validate()?;
    let train = read_dataset(&a.data)?;
    let tree = fit_student(teacher.as_ref(), &train, a.mode, a.alpha, params)?;
    let mut w = create(&a.out)?;
    tree.write_text(&mut w)?;
    w.flush()?;
    println!("tree with {} leaves, depth {} -> {}", tree.n_leaves(), tree.depth(), a.out.display());
    if let (Some(test), Some(report)) = (&a.test, &a.report) {
        let test = read_dataset(test)?;
        let r = distill_ablation(teacher.as_ref(), &train, &test, a.mode, a.alpha, params, 100)?;
        let mut w = create(report)?;
        r.write_csv(&mut w)?;
        w.flush()?;
        println!("aucc teacher {:.4} student {:.4} t-learner {:.4}", r.teacher, r.student, r.baseline);
    }
    Ok(())
}

#[derive(Serialize)]
pub struct RatioRow {
    pub pair: usize,
    pub ratio: f64,
    pub beta: f64,
    pub delta: f64,
}

/// Runs one theory suite and writes its rows.
pub fn theory_suite(suite: Suite, t: &TheorySection, root_seed: u64, out: &Path) -> Result<(), CliError> {
    let s = seed::derive(root_seed, "theory");
    match suite {
        Suite::Prop1 => {
            let rows = prop1_suite(t.prop1_instances, s)?;
            let worst = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
            println!("prop1: {} instances, max abs err {worst:.3e}", rows.len());
            write_csv_rows(out, &rows)
        }
        Suite::Prop2 => {
            let r = prop2_suite(t.prop2_pairs, t.prop2_delta_fraction, s)?;
            println!("prop2: max ratio {:.6}, beta {:.6}", r.max_ratio, r.beta);
            let rows: Vec<RatioRow> = r
                .ratios
                .iter()
                .enumerate()
                .map(|(pair, &ratio)| RatioRow {
                    pair,
                    ratio,
                    beta: r.beta,
                    delta: r.delta,
                })
                .collect();
            write_csv_rows(out, &rows)
        }
        Suite::Fqi => {
            let rows = fqi_suite(t.fqi_mdps, &t.fqi_deltas, s)?;
            let worst = rows.iter().map(|r| r.sup_err).fold(0.0, f64::max);
            println!("fqi: {} runs, max sup err {worst:.3e}", rows.len());
            write_csv_rows(out, &rows)
        }
        Suite::Thm1 => {
            let cfg = t.thm1(s);
            let table = thm1_suite(&cfg)?;
            println!("thm1: {} cells over {} seeds", table.cells.len(), cfg.seeds);
            write_csv_rows(out, &table.cells)
        }
    }
}

pub fn verify_theory(a: &TheoryArgs) -> Result<(), CliError> {
    if a.seeds == Some(0) {
        return Err(CliError::Config("--seeds must be positive".into()));
    }
    let mut t = TheorySection::default();
    if let Some(n) = a.seeds {
        match a.suite {
            Suite::Prop1 => t.prop1_instances = n,
            Suite::Prop2 => t.prop2_pairs = n,
            Suite::Fqi => t.fqi_mdps = n,
            Suite::Thm1 => t.thm1_seeds = n,
        }
    }
    theory_suite(a.suite, &t, a.seed, &a.out)
}
