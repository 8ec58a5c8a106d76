//! Teacher-student distillation of uplift scores into a regression tree.

mod tree;

use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::dataset::OfflineDataset;
use crate::uplift::{cost_curve, evaluate_model, ranked_units, ScoreMode, TLearner, UpliftModel};
use crate::{Error, Result};

pub use tree::{Node, RegressionTree, TreeParams};

/// Production AUCC magnitudes for teacher, student and no-teacher baseline,
/// kept for side-by-side context in reports.
pub const REFERENCE_AUCC: [f64; 3] = [0.729, 0.705, 0.601];

/// Replaces infinite scores by finite stand-ins that keep the ordering:
/// `+inf` one unit above the largest finite label, `-inf` one below the
/// smallest. NaN is rejected.
pub fn cap_infinities(scores: &mut [f64]) -> Result<()> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN teacher score".into()));
    }
    let finite = scores.iter().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    for s in scores.iter_mut() {
        if *s == f64::INFINITY {
            *s = hi + 1.0;
        } else if *s == f64::NEG_INFINITY {
            *s = lo - 1.0;
        }
    }
    Ok(())
}

/// Finite regression targets for the student: the teacher's scores with
/// infinities capped.
pub fn make_teacher_labels(
    teacher: &dyn UpliftModel,
    states: &[&[f64]],
    mode: ScoreMode,
    alpha: f64,
) -> Result<Vec<f64>> {
    let mut labels = teacher.score(states, mode, alpha)?;
    cap_infinities(&mut labels)?;
    Ok(labels)
}

fn state_matrix(ds: &OfflineDataset) -> Array2<f64> {
    let mut x = Array2::zeros((ds.len(), ds.state_dim()));
    for (mut row, t) in x.rows_mut().into_iter().zip(ds.transitions()) {
        row.iter_mut().zip(&t.state).for_each(|(d, v)| *d = *v);
    }
    x
}

/// Fits a tree to the teacher's labels on the raw states of `train`.
pub fn fit_student(
    teacher: &dyn UpliftModel,
    train: &OfflineDataset,
    mode: ScoreMode,
    alpha: f64,
    params: TreeParams,
) -> Result<RegressionTree> {
    let states: Vec<&[f64]> = train
        .transitions()
        .iter()
        .map(|t| t.state.as_slice())
        .collect();
    let labels = make_teacher_labels(teacher, &states, mode, alpha)?;
    RegressionTree::fit(state_matrix(train).view(), &labels, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistillReport {
    pub teacher: f64,
    pub student: f64,
    pub baseline: f64,
}

#[derive(Serialize)]
struct ReportRow<'a> {
    model: &'a str,
    aucc: f64,
    reference_aucc: f64,
}

impl DistillReport {
    /// Three rows `model,aucc,reference_aucc`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let rows = [
            ("teacher", self.teacher),
            ("student-with-teacher", self.student),
            ("t-learner-baseline", self.baseline),
        ];
        for ((model, aucc), reference_aucc) in rows.into_iter().zip(REFERENCE_AUCC) {
            out.serialize(ReportRow {
                model,
                aucc,
                reference_aucc,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Test AUCC of the teacher, of a student tree trained on the teacher's
/// labels over `train`, and of a T-learner fitted on `train` with the same
/// tree settings.
pub fn distill_ablation(
    teacher: &dyn UpliftModel,
    train: &OfflineDataset,
    test: &OfflineDataset,
    mode: ScoreMode,
    alpha: f64,
    params: TreeParams,
    n_buckets: usize,
) -> Result<DistillReport> {
    let teacher_aucc = evaluate_model(teacher, test, mode, alpha, n_buckets)?.aucc;
    let student = fit_student(teacher, train, mode, alpha, params)?;
    let student_scores = student.predict(state_matrix(test).view())?;
    let student_aucc = cost_curve(&ranked_units(test, &student_scores)?, n_buckets)?.aucc;
    let baseline = TLearner::fit(train, params)?;
    let baseline_aucc = evaluate_model(&baseline, test, mode, alpha, n_buckets)?.aucc;
    Ok(DistillReport {
        teacher: teacher_aucc,
        student: student_aucc,
        baseline: baseline_aucc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use crate::seed;
    use crate::uplift::score_from_effects;
    use rand::Rng;

    /// Scores from known effects `(x0, -(1 + x1^2))`.
    struct Oracle;

    impl UpliftModel for Oracle {
        fn score(&self, states: &[&[f64]], mode: ScoreMode, alpha: f64) -> Result<Vec<f64>> {
            Ok(states
                .iter()
                .map(|s| score_from_effects(s[0], -(1.0 + s[1] * s[1]), mode, alpha))
                .collect())
        }
    }

    fn population(n: usize, seed_: u64) -> OfflineDataset {
        let mut rng = seed::rng(seed_);
        let ts = (0..n)
            .map(|i| {
                let s = vec![rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)];
                let treated = rng.random_bool(0.5);
                let h = if treated { 1.0 } else { 0.0 };
                Transition {
                    episode_id: i as u64,
                    step_index: 0,
                    next_state: s.clone(),
                    reward_rev: h * s[0] + rng.random_range(-1.0..1.0),
                    reward_eng: -h * (1.0 + s[1] * s[1]) + rng.random_range(-1.0..1.0),
                    state: s,
                    action: u32::from(treated),
                    done: true,
                    time_bucket: 0,
                }
            })
            .collect();
        OfflineDataset::new(ts, 2, 2).unwrap()
    }

    #[test]
    fn capping_preserves_order() {
        let mut s = vec![f64::INFINITY, 0.5, f64::NEG_INFINITY, -2.0, 3.0];
        cap_infinities(&mut s).unwrap();
        assert_eq!(s, vec![4.0, 0.5, -3.0, -2.0, 3.0]);
        let mut only_inf = vec![f64::INFINITY, f64::NEG_INFINITY];
        cap_infinities(&mut only_inf).unwrap();
        assert_eq!(only_inf, vec![1.0, -1.0]);
        assert!(cap_infinities(&mut [f64::NAN]).is_err());
    }

    #[test]
    fn labels_are_pure_and_order_aligned() {
        let a: &[f64] = &[0.3, 0.1];
        let b: &[f64] = &[0.9, -0.5];
        let l1 = make_teacher_labels(&Oracle, &[a, b, a], ScoreMode::Combined, 1.0).unwrap();
        assert_eq!(l1[0], l1[2]);
        let l2 = make_teacher_labels(&Oracle, &[b, a, a], ScoreMode::Combined, 1.0).unwrap();
        assert_eq!((l2[0], l2[1]), (l1[1], l1[0]));
        // combined with alpha 1 is d_rev + d_eng
        assert!((l1[0] - (0.3 - 1.01)).abs() < 1e-15);
    }

    #[test]
    fn exact_student_matches_teacher_aucc() {
        // piecewise-constant teacher the tree can represent exactly
        struct Steps;
        impl UpliftModel for Steps {
            fn score(&self, states: &[&[f64]], _: ScoreMode, _: f64) -> Result<Vec<f64>> {
                Ok(states
                    .iter()
                    .map(
                        |s| if s[0] > 0.5 { 2.0 } else { 1.0 } + if s[1] > 0.0 { 0.5 } else { 0.0 },
                    )
                    .collect())
            }
        }
        let train = population(2000, 1);
        let student = fit_student(
            &Steps,
            &train,
            ScoreMode::Combined,
            1.0,
            TreeParams::new(4, 1),
        )
        .unwrap();
        let labels = make_teacher_labels(
            &Steps,
            &train
                .transitions()
                .iter()
                .map(|t| t.state.as_slice())
                .collect::<Vec<_>>(),
            ScoreMode::Combined,
            1.0,
        )
        .unwrap();
        assert_eq!(
            student.predict(state_matrix(&train).view()).unwrap(),
            labels
        );
        let report = distill_ablation(
            &Steps,
            &train,
            &train,
            ScoreMode::Combined,
            1.0,
            TreeParams::new(4, 1),
            50,
        )
        .unwrap();
        assert_eq!(report.student, report.teacher);
    }

    #[test]
    fn student_tracks_an_oracle_teacher() {
        let train = population(20_000, 2);
        let test = population(20_000, 3);
        let r = distill_ablation(
            &Oracle,
            &train,
            &test,
            ScoreMode::Sensitivity,
            1.0,
            TreeParams::default(),
            100,
        )
        .unwrap();
        assert!(r.student >= 0.9 * r.teacher, "{r:?}");
        assert!(r.student > r.baseline, "{r:?}");
    }

    #[test]
    fn report_has_three_rows() {
        let r = DistillReport {
            teacher: 0.7,
            student: 0.68,
            baseline: 0.6,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "model,aucc,reference_aucc");
        assert_eq!(text.lines().count(), 4);
    }
}
