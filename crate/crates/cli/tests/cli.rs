use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn adload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adload"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_SESSION: &str = r#"
[run]
name = "tiny"
env = "session"
seed = 3
stages = ["collect", "train", "eval-aucc", "distill"]

[session]
drift_amplitude = 1.0

[dataset]
n_samples = 3000
split = "random"

[agent]
train_steps = 150
hidden = [16]
lr = 0.001
center_rewards = true

[train]
variants = ["dqn", "robust-dueling"]
seeds = [0]

[distill.tree]
max_depth = 4
min_samples_leaf = 20
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|e| e == "csv" || e == "tree") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn negative_delta_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY_SESSION.replace("train_steps = 150", "train_steps = 150\ndelta = -0.5"));
    let out = tmp.path().join("run");
    let o = adload(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("delta"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY_SESSION.replace("[train]", "[train]\nepochs = 3"));
    let o = adload(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_upstream_artifact_names_its_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_SESSION);
    let out = tmp.path().join("run");
    let o = adload(&["run", "--config", s(&cfg), "--stage", "train", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run the `collect` stage first"), "{}", stderr(&o));
    let o = adload(&["run", "--config", s(&cfg), "--stage", "collect", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = adload(&["run", "--config", s(&cfg), "--stage", "eval-aucc", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run the `train` stage first"), "{}", stderr(&o));
}

#[test]
fn identical_config_reproduces_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_SESSION);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = adload(&["run", "--config", s(&cfg), "--stage", "all", "--out", s(dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.len() >= 5, "{fa:?}");
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());

    // rerunning a finished stage in place rewrites the same bytes
    let before = fs::read(a.join("eval/aucc.csv")).unwrap();
    let o = adload(&["run", "--config", s(&cfg), "--stage", "eval-aucc", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(before, fs::read(a.join("eval/aucc.csv")).unwrap());

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    for stage in ["collect", "train", "eval-aucc", "distill"] {
        assert!(manifest["stages"][stage]["outputs"].as_object().is_some_and(|m| !m.is_empty()), "{stage}");
    }
    assert!(a.join("config.toml").is_file());
    assert!(!a.join(".lock").exists());
}

#[test]
fn single_step_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name);
    let run = |args: &[&str]| {
        let o = adload(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["collect", "--env", "session", "--n", "2000", "--seed", "7", "--out", s(&p("d.orld")), "--csv", s(&p("d.csv"))]);
    let header = fs::read_to_string(p("d.csv")).unwrap();
    assert!(header.starts_with("episode_id"), "{}", &header[..40.min(header.len())]);
    for (objective, name) in [("revenue", "rev.orlw"), ("engagement", "eng.orlw")] {
        run(&[
            "train", "--data", s(&p("d.orld")), "--variant", "robust-dueling", "--objective", objective,
            "--steps", "100", "--hidden", "8", "--seed", "1", "--out", s(&p(name)),
        ]);
    }
    let stdout = run(&[
        "eval-aucc", "--revenue-agent", s(&p("rev.orlw")), "--engagement-agent", s(&p("eng.orlw")),
        "--data", s(&p("d.orld")), "--mode", "sensitivity", "--out", s(&p("curve.csv")),
    ]);
    assert!(stdout.starts_with("aucc "), "{stdout}");
    assert!(fs::read_to_string(p("curve.csv")).unwrap().starts_with("fraction,x,y"));
    run(&[
        "distill", "--revenue-teacher", s(&p("rev.orlw")), "--engagement-teacher", s(&p("eng.orlw")),
        "--data", s(&p("d.orld")), "--depth", "3", "--out", s(&p("student.tree")),
    ]);
    assert!(fs::read_to_string(p("student.tree")).unwrap().starts_with("regression-tree v1"));
    run(&["verify-theory", "--suite", "prop1", "--seeds", "4", "--out", s(&p("prop1.csv"))]);
    assert_eq!(fs::read_to_string(p("prop1.csv")).unwrap().lines().count(), 5);

    // a scalarized agent cannot produce sensitivity scores
    let o = adload(&[
        "eval-aucc", "--agent", s(&p("rev.orlw")), "--data", s(&p("d.orld")), "--mode", "sensitivity",
        "--out", s(&p("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn cartpole_sweep_from_random_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name);
    let ok = |o: Output| assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    ok(adload(&["collect", "--env", "cartpole", "--n", "2000", "--epsilon", "1", "--out", s(&p("c.orld"))]));
    ok(adload(&[
        "train", "--data", s(&p("c.orld")), "--variant", "dueling", "--gamma", "0.99", "--steps", "100",
        "--hidden", "8", "--out", s(&p("a.orlw")),
    ]));
    ok(adload(&[
        "sweep-perturb", "--agent", s(&p("a.orlw")), "--param", "force_mag", "--grid", "5,10,15", "--episodes", "2",
        "--out", s(&p("sweep.csv")),
    ]));
    let text = fs::read_to_string(p("sweep.csv")).unwrap();
    assert!(text.starts_with("param_value,mean,std"));
    assert_eq!(text.lines().count(), 4);

    let o = adload(&[
        "sweep-perturb", "--agent", s(&p("a.orlw")), "--param", "force_mag", "--grid", "5,15", "--out", s(&p("bad.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_with_one() {
    let o = adload(&["train", "--variant", "nope", "--data", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    let o = adload(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}
