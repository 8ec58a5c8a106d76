//! `adload run`: config-driven stages writing into one output directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.toml                     resolved config
//! manifest.json                   per-stage input/output hashes
//! data/corpus.orld                collect
//! data/train.orld, data/test.orld collect (identical when split = "none")
//! data/expert.orlw                collect, cartpole only
//! agents/<variant>-s<seed>[-revenue|-engagement].orlw   train
//! eval/aucc.csv, eval/curve-*.csv eval-aucc
//! sweeps/<variant>-s<seed>-<param>.csv, sweeps/summary.csv   sweep-perturb
//! distill/student.tree, distill/report.csv                   distill
//! theory/<suite>.csv              verify-theory
//! ```

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use adload_core::agents::{train_offline, AgentConfig, Objective, TrainedAgent, Variant};
use adload_core::dataset::OfflineDataset;
use adload_core::distill::{distill_ablation, fit_student};
use adload_core::env::EnvKind;
use adload_core::experiments::Scoring;
use adload_core::uplift::{default_grid, evaluate_model, perturb_sweep, write_curve_csv, write_sweep_csv, ObjectivePair, TLearner, UpliftModel};
use adload_core::seed;
use serde::{Deserialize, Serialize};

use crate::commands::{build_corpus, create, read_agent, read_dataset, theory_suite, write_agent, write_csv_rows, write_dataset, CorpusSpec};
use crate::config::{ExperimentConfig, SplitKind};
use crate::error::CliError;
use crate::manifest::{sha256_hex, Manifest};
use crate::Suite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Collect,
    Train,
    EvalAucc,
    SweepPerturb,
    Distill,
    VerifyTheory,
    All,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::Train => "train",
            Stage::EvalAucc => "eval-aucc",
            Stage::SweepPerturb => "sweep-perturb",
            Stage::Distill => "distill",
            Stage::VerifyTheory => "verify-theory",
            Stage::All => "all",
        }
    }

    /// What `all` runs when the config does not list stages.
    pub fn defaults_for(env: EnvKind) -> Vec<Stage> {
        match env {
            EnvKind::Cartpole => vec![Stage::Collect, Stage::Train, Stage::SweepPerturb],
            EnvKind::Session => vec![Stage::Collect, Stage::Train, Stage::EvalAucc, Stage::Distill],
        }
    }
}

const CORPUS: &str = "data/corpus.orld";
const TRAIN: &str = "data/train.orld";
const TEST: &str = "data/test.orld";
const EXPERT: &str = "data/expert.orlw";

/// Held for the lifetime of a run; one writer per directory.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::runtime(format!(
                "{} is locked by another run; delete {} if no run is active",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    manifest: Manifest,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// `rel` must already exist, else names the stage that writes it.
    fn need(&self, rel: &str, producer: Stage) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::missing(&p, producer.name()))
        }
    }

    fn record(&mut self, stage: Stage, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<(), CliError> {
        self.manifest.record(self.dir, stage.name(), inputs, outputs)?;
        self.manifest.save(self.dir)
    }

    fn agent_seed(&self, replicate: u64) -> u64 {
        seed::derive_indexed(self.cfg.run.seed, "train", replicate)
    }

    /// Per-objective session agents come in revenue/engagement pairs.
    fn paired(&self) -> bool {
        self.cfg.run.env == EnvKind::Session && self.cfg.train.scoring == Scoring::PerObjective
    }

    fn agent_files(&self, variant: Variant, replicate: u64) -> Vec<(String, Objective)> {
        let stem = format!("agents/{variant}-s{replicate}");
        if self.paired() {
            vec![
                (format!("{stem}-revenue.orlw"), Objective::Revenue),
                (format!("{stem}-engagement.orlw"), Objective::Engagement),
            ]
        } else {
            vec![(format!("{stem}.orlw"), self.cfg.agent.objective)]
        }
    }

    fn load_model(&self, variant: Variant, replicate: u64, inputs: &mut Vec<PathBuf>) -> Result<Box<dyn UpliftModel>, CliError> {
        let mut agents = Vec::new();
        for (rel, _) in self.agent_files(variant, replicate) {
            let p = self.need(&rel, Stage::Train)?;
            agents.push(read_agent(&p)?);
            inputs.push(p);
        }
        Ok(match agents.len() {
            1 => Box::new(agents.pop().unwrap()),
            _ => {
                let eng = agents.pop().unwrap();
                let rev = agents.pop().unwrap();
                Box::new(ObjectivePair::new(rev, eng)?)
            }
        })
    }
}

pub fn run(config_path: &Path, stage: Stage, out: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    let _lock = DirLock::acquire(out)?;
    let resolved = cfg.resolved_toml();
    fs::write(out.join("config.toml"), &resolved)?;
    let manifest = Manifest::open(out, &cfg.run.name, cfg.run.seed, &sha256_hex(resolved.as_bytes()))?;
    let mut ctx = Ctx {
        cfg: &cfg,
        dir: out,
        manifest,
    };
    let stages = match stage {
        Stage::All if cfg.run.stages.is_empty() => Stage::defaults_for(cfg.run.env),
        Stage::All => cfg.run.stages.clone(),
        s => vec![s],
    };
    for s in stages {
        log::info!("stage {}", s.name());
        run_stage(&mut ctx, s)?;
    }
    ctx.manifest.save(out)
}

fn run_stage(ctx: &mut Ctx<'_>, stage: Stage) -> Result<(), CliError> {
    match stage {
        Stage::Collect => collect(ctx),
        Stage::Train => train(ctx),
        Stage::EvalAucc => eval_aucc(ctx),
        Stage::SweepPerturb => sweep(ctx),
        Stage::Distill => distill(ctx),
        Stage::VerifyTheory => theory(ctx),
        Stage::All => Err(CliError::Config("`all` cannot appear in run.stages".into())),
    }
}

fn split(ds: &OfflineDataset, cfg: &ExperimentConfig) -> Result<(OfflineDataset, OfflineDataset), CliError> {
    let d = &cfg.dataset;
    Ok(match d.split {
        SplitKind::None => (ds.clone(), ds.clone()),
        SplitKind::Time => ds.split_by_time(d.time_cut)?,
        SplitKind::Random => ds.split_random(d.train_fraction, &mut seed::rng_for(cfg.run.seed, "split"))?,
    })
}

fn collect(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let spec = CorpusSpec {
        env: cfg.run.env,
        n_samples: cfg.dataset.n_samples,
        epsilon: cfg.dataset.epsilon,
        physics: cfg.cartpole,
        session: cfg.session,
        expert: &cfg.expert,
        root_seed: cfg.run.seed,
    };
    let (ds, expert) = build_corpus(&spec, None)?;
    let (train, test) = split(&ds, cfg)?;
    let mut outputs = Vec::new();
    for (rel, d) in [(CORPUS, &ds), (TRAIN, &train), (TEST, &test)] {
        let p = ctx.path(rel);
        write_dataset(d, &p)?;
        outputs.push(p);
    }
    if let Some(e) = expert {
        let p = ctx.path(EXPERT);
        write_agent(&e, &p)?;
        outputs.push(p);
    }
    println!("collect: {} transitions ({} train, {} test)", ds.len(), train.len(), test.len());
    ctx.record(Stage::Collect, &[], &outputs)
}

fn train(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    let input = ctx.need(TRAIN, Stage::Collect)?;
    let ds = read_dataset(&input)?;
    let mut outputs = Vec::new();
    for &replicate in &ctx.cfg.train.seeds {
        for &variant in &ctx.cfg.train.variants {
            for (rel, objective) in ctx.agent_files(variant, replicate) {
                let agent_cfg = AgentConfig {
                    seed: ctx.agent_seed(replicate),
                    objective,
                    ..ctx.cfg.agent.clone()
                };
                let agent = train_offline(&ds, &agent_cfg, variant)?;
                let p = ctx.path(&rel);
                write_agent(&agent, &p)?;
                println!("train: {rel}");
                outputs.push(p);
            }
        }
    }
    ctx.record(Stage::Train, &[input], &outputs)
}

#[derive(Serialize)]
struct AuccRow {
    model: String,
    seed: Option<u64>,
    aucc: f64,
}

fn session_only(ctx: &Ctx<'_>, stage: Stage) -> Result<(), CliError> {
    if ctx.cfg.run.env != EnvKind::Session {
        return Err(CliError::Config(format!("stage `{}` needs run.env = \"session\"", stage.name())));
    }
    Ok(())
}

fn eval_aucc(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    session_only(ctx, Stage::EvalAucc)?;
    let cfg = ctx.cfg;
    let test_path = ctx.need(TEST, Stage::Collect)?;
    let test = read_dataset(&test_path)?;
    let (mode, alpha, buckets) = (cfg.eval.mode, cfg.agent.alpha, cfg.eval.n_buckets);
    let mut inputs = vec![test_path];
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    let mut emit = |name: String, seed: Option<u64>, model: &dyn UpliftModel, outputs: &mut Vec<PathBuf>| -> Result<(), CliError> {
        let curve = evaluate_model(model, &test, mode, alpha, buckets)?;
        let p = ctx.path(&format!("eval/curve-{name}.csv"));
        let mut w = create(&p)?;
        write_curve_csv(&curve, &mut w)?;
        drop(w);
        println!("eval-aucc: {name} {:.6}", curve.aucc);
        outputs.push(p);
        rows.push(AuccRow {
            model: name,
            seed,
            aucc: curve.aucc,
        });
        Ok(())
    };
    for &replicate in &cfg.train.seeds {
        for &variant in &cfg.train.variants {
            let model = ctx.load_model(variant, replicate, &mut inputs)?;
            emit(format!("{variant}-s{replicate}"), Some(replicate), model.as_ref(), &mut outputs)?;
        }
    }
    if cfg.eval.tlearner {
        let train_path = ctx.need(TRAIN, Stage::Collect)?;
        let model = TLearner::fit(&read_dataset(&train_path)?, cfg.distill.tree)?;
        inputs.push(train_path);
        emit("t-learner".into(), None, &model, &mut outputs)?;
    }
    let summary = ctx.path("eval/aucc.csv");
    write_csv_rows(&summary, &rows)?;
    outputs.push(summary);
    ctx.record(Stage::EvalAucc, &inputs, &outputs)
}

#[derive(Serialize)]
struct SweepRow {
    variant: Variant,
    seed: u64,
    param: String,
    param_value: f64,
    mean: f64,
    std: f64,
}

fn sweep(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    if cfg.run.env != EnvKind::Cartpole {
        return Err(CliError::Config("stage `sweep-perturb` needs run.env = \"cartpole\"".into()));
    }
    let root = seed::derive(cfg.run.seed, "sweep");
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for &replicate in &cfg.train.seeds {
        for &variant in &cfg.train.variants {
            let (rel, _) = ctx.agent_files(variant, replicate).remove(0);
            let p = ctx.need(&rel, Stage::Train)?;
            let agent: TrainedAgent = read_agent(&p)?;
            inputs.push(p);
            for &param in &cfg.eval.params {
                let grid = cfg.eval.grids.get(&param).cloned().unwrap_or_else(|| default_grid(param, &cfg.cartpole));
                let result = perturb_sweep(&agent, &cfg.cartpole, param, &grid, cfg.eval.episodes, cfg.eval.env_seeds, root)?;
                let out = ctx.path(&format!("sweeps/{variant}-s{replicate}-{param}.csv"));
                let mut w = create(&out)?;
                write_sweep_csv(&result, &mut w)?;
                drop(w);
                outputs.push(out);
                let means: Vec<String> = result.points.iter().map(|p| format!("{:.1}", p.mean)).collect();
                println!("sweep-perturb: {variant} s{replicate} {param}: {}", means.join(" "));
                rows.extend(result.points.iter().map(|pt| SweepRow {
                    variant,
                    seed: replicate,
                    param: param.to_string(),
                    param_value: pt.param_value,
                    mean: pt.mean,
                    std: pt.std,
                }));
            }
        }
    }
    let summary = ctx.path("sweeps/summary.csv");
    write_csv_rows(&summary, &rows)?;
    outputs.push(summary);
    ctx.record(Stage::SweepPerturb, &inputs, &outputs)
}

fn distill(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    session_only(ctx, Stage::Distill)?;
    let cfg = ctx.cfg;
    let teacher_variant = cfg.distill.teacher;
    if !cfg.train.variants.contains(&teacher_variant) {
        return Err(CliError::Config(format!("distill.teacher `{teacher_variant}` is not among train.variants")));
    }
    let train_path = ctx.need(TRAIN, Stage::Collect)?;
    let test_path = ctx.need(TEST, Stage::Collect)?;
    let mut inputs = vec![train_path.clone(), test_path.clone()];
    let teacher = ctx.load_model(teacher_variant, cfg.train.seeds[0], &mut inputs)?;
    let (train, test) = (read_dataset(&train_path)?, read_dataset(&test_path)?);
    let (mode, alpha) = (cfg.eval.mode, cfg.agent.alpha);
    let tree = fit_student(teacher.as_ref(), &train, mode, alpha, cfg.distill.tree)?;
    let tree_path = ctx.path("distill/student.tree");
    let mut w = create(&tree_path)?;
    tree.write_text(&mut w)?;
    drop(w);
    let report = distill_ablation(teacher.as_ref(), &train, &test, mode, alpha, cfg.distill.tree, cfg.eval.n_buckets)?;
    let report_path = ctx.path("distill/report.csv");
    let mut w = create(&report_path)?;
    report.write_csv(&mut w)?;
    drop(w);
    println!(
        "distill: teacher {:.4} student {:.4} t-learner {:.4}",
        report.teacher, report.student, report.baseline
    );
    ctx.record(Stage::Distill, &inputs, &[tree_path, report_path])
}

fn theory(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    let mut outputs = Vec::new();
    for (suite, name) in [(Suite::Prop1, "prop1"), (Suite::Prop2, "prop2"), (Suite::Fqi, "fqi"), (Suite::Thm1, "thm1")] {
        let p = ctx.path(&format!("theory/{name}.csv"));
        theory_suite(suite, &ctx.cfg.theory, ctx.cfg.run.seed, &p)?;
        outputs.push(p);
    }
    ctx.record(Stage::VerifyTheory, &[], &outputs)
}
