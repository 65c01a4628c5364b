use std::collections::BTreeMap;

use selfopt::baselines;
use selfopt::evaluation::{compare, NormalizationSpec};
use selfopt::inner_loop::{self, LearningCurve, Optimizer};
use selfopt::learned_opt::LearnedOptParams;
use selfopt::tasks::{self, FamilyId, TaskFamily};

fn convex_tasks(horizon: u64) -> Vec<tasks::TaskInstance> {
    [FamilyId::NoisyQuadratic, FamilyId::LinearRegression, FamilyId::LogisticRegression]
        .into_iter()
        .flat_map(|f| (0..3).map(move |s| tasks::sample_task(&TaskFamily::new(f, 2, 8).with_noise(0.0), s, horizon)))
        .collect()
}

#[test]
fn noise_free_quadratic_has_near_zero_l_best() {
    for s in 0..4 {
        let task = tasks::sample_task(&TaskFamily::new(FamilyId::NoisyQuadratic, 2, 6).with_noise(0.0), s, 2000);
        assert!(task.l_best.abs() < 1e-3, "seed {s}: l_best {}", task.l_best);
        assert!(task.l_best <= task.l_init);
    }
}

#[test]
fn tuned_curve_ends_near_zero_on_its_own_task() {
    let norm = NormalizationSpec::default();
    for task in convex_tasks(300) {
        let (_, curve) = baselines::tuned_adam(&task, 300, 0, &norm);
        let smoothed = baselines::smoothed_final(&curve);
        let at_end = selfopt::evaluation::normalize(smoothed, task.l_init, task.l_best, &norm);
        assert!(at_end <= 0.05, "{:?}: {at_end}", task.family.id);
        // per-step values only settle at 0 where batch noise is absent
        if task.family.id != FamilyId::LogisticRegression {
            let tail = &curve.normalized[curve.normalized.len() - 30..];
            let mean = tail.iter().sum::<f64>() / tail.len() as f64;
            assert!(mean <= 0.05, "{:?}: {mean}", task.family.id);
        }
    }
}

#[test]
fn compare_contracts() {
    let norm = NormalizationSpec::default();
    let tasks = convex_tasks(200);
    let tuned: Vec<LearningCurve> = tasks.iter().map(|t| baselines::tuned_adam(t, 200, 0, &norm).1).collect();
    let zero = LearnedOptParams::zeros();
    let zeros: Vec<LearningCurve> =
        tasks.iter().map(|t| inner_loop::train(t, Optimizer::Learned(&zero), 200, 0, &norm)).collect();
    let capped: Vec<LearningCurve> = tuned
        .iter()
        .map(|c| LearningCurve {
            losses: vec![f64::NAN; c.len()],
            normalized: vec![2.0; c.len()],
            diverged_at: Some(0),
        })
        .collect();
    let mut curves = BTreeMap::new();
    curves.insert("tuned".to_string(), tuned.clone());
    curves.insert("zero".to_string(), zeros);
    curves.insert("capped".to_string(), capped);
    let out = compare(&curves, &tuned).unwrap();
    let by_id: BTreeMap<_, _> = out.iter().map(|s| (s.optimizer_id.as_str(), s)).collect();

    let own = by_id["tuned"];
    assert_eq!(own.beat_tuned_fraction, 0.0);
    let direct = tuned.iter().map(inner_loop::meta_loss).sum::<f64>() / tuned.len() as f64;
    assert!((own.final_mean_score - direct).abs() < 1e-12);

    assert_eq!(by_id["zero"].beat_tuned_fraction, 0.0);
    // the noise-free quadratic has no batches, so a frozen run records one value
    for (t, c) in tasks.iter().zip(&curves["zero"]) {
        if t.family.id == FamilyId::NoisyQuadratic {
            assert!(c.normalized.iter().all(|&v| v == c.normalized[0]));
        }
    }

    assert_eq!(by_id["capped"].final_mean_score, 2.0);
    assert!(by_id["capped"].mean_curve.iter().all(|&v| v == 2.0));
}

#[test]
fn compare_rejects_mismatched_protocols() {
    let norm = NormalizationSpec::default();
    let task = &convex_tasks(50)[0];
    let a = baselines::tuned_adam(task, 50, 0, &norm).1;
    let b = baselines::tuned_adam(task, 40, 0, &norm).1;
    let mut curves = BTreeMap::new();
    curves.insert("short".to_string(), vec![b]);
    assert!(compare(&curves, &[a.clone()]).is_err());
    curves.insert("short".to_string(), vec![a.clone(), a.clone()]);
    assert!(compare(&curves, &[a]).is_err());
}
