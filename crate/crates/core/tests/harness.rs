use std::sync::Mutex;

use annot_core::corpus::{
    generate_synthetic, AnnotatorGroup, FoldIndices, SyntheticConfig, SyntheticCorpus,
};
use annot_core::eval::{
    evaluate_all, plan_folds, run_experiment, train_all, train_run, Artifact, EvalMode,
    ExperimentConfig, RunKind,
};
use annot_core::models::{Architecture, TrainConfig};
use annot_core::uncert::Estimator;
use annot_core::Error;

fn corpus(seed: u64) -> SyntheticCorpus {
    let cfg = SyntheticConfig {
        instances: 60,
        annotations_per_instance: 3,
        seed,
        trigger_rate: 0.3,
        groups: vec![
            AnnotatorGroup {
                name: "p".into(),
                count: 3,
                threshold: 0.1,
                threshold_spread: 0.05,
                bias: 0.3,
                noise: 0.1,
            },
            AnnotatorGroup {
                name: "n".into(),
                count: 3,
                threshold: 0.1,
                threshold_spread: 0.05,
                bias: -0.3,
                noise: 0.1,
            },
        ],
        ..SyntheticConfig::two_group_benchmark(seed)
    };
    generate_synthetic(&cfg).unwrap()
}

fn experiment(
    architectures: Vec<Architecture>,
    estimators: Vec<Estimator>,
    mode: EvalMode,
) -> ExperimentConfig {
    ExperimentConfig {
        architectures,
        train: TrainConfig {
            epochs: 2,
            embed_dim: 8,
            hidden_dim: 8,
            ..TrainConfig::default()
        },
        mode,
        estimators,
        mc_samples: 4,
        seed: 9,
    }
}

fn expected(c: &SyntheticCorpus) -> Vec<f64> {
    c.truth.iter().map(|t| t.expected_disagreement).collect()
}

#[test]
fn counts_runs_per_fold_and_model() {
    let c = corpus(1);
    let cfg = experiment(
        vec![Architecture::MultiTask, Architecture::Baseline],
        vec![Estimator::AnnotationVariance, Estimator::Softmax],
        EvalMode::Cv {
            iterations: 1,
            k: 2,
        },
    );
    let e = run_experiment(&c.matrix, Some(&expected(&c)), &cfg, 1, |_, _| Ok(())).unwrap();
    assert_eq!(e.report.runs.len(), 4);
    let keys: Vec<(usize, RunKind)> = e.report.runs.iter().map(|r| (r.fold, r.model)).collect();
    assert_eq!(
        keys,
        [
            (0, RunKind::Model(Architecture::Baseline)),
            (0, RunKind::Model(Architecture::MultiTask)),
            (1, RunKind::Model(Architecture::Baseline)),
            (1, RunKind::Model(Architecture::MultiTask)),
        ]
    );
    for s in &e.report.summaries {
        assert_eq!(s.runs, 2);
        assert_eq!(s.majority.as_ref().unwrap().f1.n, 2);
    }
    // two series against two references
    assert_eq!(e.report.correlations.len(), 4);
    assert_eq!(e.timing.records.len(), 4);
    assert_eq!(e.uncertainty.len(), 2 * 60);
    assert_eq!(e.report.mismatch.as_ref().unwrap().instances, 60);
}

#[test]
fn reports_do_not_depend_on_scheduling() {
    let c = corpus(2);
    let cfg = experiment(
        Architecture::ALL.to_vec(),
        vec![
            Estimator::AnnotationVariance,
            Estimator::McDropout,
            Estimator::Regressor,
        ],
        EvalMode::Cv {
            iterations: 2,
            k: 2,
        },
    );
    let x = expected(&c);
    let a = run_experiment(&c.matrix, Some(&x), &cfg, 1, |_, _| Ok(())).unwrap();
    let b = run_experiment(&c.matrix, Some(&x), &cfg, 3, |_, _| Ok(())).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.dump, b.dump);
    assert_eq!(a.uncertainty, b.uncertainty);
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
}

#[test]
fn separate_training_and_evaluation_match_the_combined_run() {
    let c = corpus(3);
    let cfg = experiment(
        vec![Architecture::Baseline, Architecture::Ensemble],
        vec![
            Estimator::Softmax,
            Estimator::AnnotationVariance,
            Estimator::Regressor,
        ],
        EvalMode::Cv {
            iterations: 1,
            k: 3,
        },
    );
    let x = expected(&c);
    let stored: Mutex<Vec<(usize, RunKind, Artifact)>> = Mutex::new(Vec::new());
    let (folds, timing) = train_all(&c.matrix, &cfg, 2, |fold, artifact| {
        stored
            .lock()
            .unwrap()
            .push((fold.fold, artifact.kind(), artifact.clone()));
        Ok(())
    })
    .unwrap();
    assert_eq!(folds.len(), 3);
    assert_eq!(timing.records.len(), 9);
    let stored = stored.into_inner().unwrap();
    let (report, dump, _) = evaluate_all(&c.matrix, Some(&x), &cfg, 1, |fold, kind| {
        Ok(stored
            .iter()
            .find(|s| s.0 == fold.fold && s.1 == kind)
            .unwrap()
            .2
            .clone())
    })
    .unwrap();
    let combined = run_experiment(&c.matrix, Some(&x), &cfg, 1, |_, _| Ok(())).unwrap();
    assert_eq!(report, combined.report);
    assert_eq!(dump, combined.dump);

    // handing back the wrong artifact is a mismatch
    let wrong = evaluate_all(&c.matrix, Some(&x), &cfg, 1, |fold, _| {
        Ok(stored
            .iter()
            .find(|s| s.0 == fold.fold && s.1 == RunKind::Regressor)
            .unwrap()
            .2
            .clone())
    });
    assert!(wrong.is_err());
}

#[test]
fn holdout_and_predefined_modes_run_once() {
    let c = corpus(4);
    let holdout = experiment(
        vec![Architecture::Baseline],
        vec![],
        EvalMode::Holdout {
            test_fraction: 0.25,
        },
    );
    let e = run_experiment(&c.matrix, None, &holdout, 1, |_, _| Ok(())).unwrap();
    assert_eq!(e.report.runs.len(), 1);
    // each majority class contributes round(count / 4) test instances
    let pos = c.matrix.majority_labels().iter().filter(|&&g| g).count();
    let per_class = |n: usize| (n as f64 * 0.25).round() as usize;
    assert_eq!(
        e.report.runs[0].test_size,
        per_class(pos) + per_class(60 - pos)
    );

    let split = FoldIndices {
        train: (0..40).collect(),
        validation: Vec::new(),
        test: (40..60).collect(),
    };
    let fixed = experiment(
        vec![Architecture::MultiLabel],
        vec![],
        EvalMode::Predefined { split },
    );
    let folds = plan_folds(&c.matrix, &fixed).unwrap();
    assert_eq!(folds.len(), 1);
    assert_eq!(folds[0].indices.test, (40..60).collect::<Vec<_>>());
    let e = run_experiment(&c.matrix, None, &fixed, 1, |_, _| Ok(())).unwrap();
    assert_eq!(e.report.runs[0].test_size, 20);
    assert!(e.report.correlations.is_empty());

    let overlapping = FoldIndices {
        train: (0..40).collect(),
        validation: Vec::new(),
        test: (30..60).collect(),
    };
    let bad = experiment(
        vec![Architecture::Baseline],
        vec![],
        EvalMode::Predefined { split: overlapping },
    );
    assert!(plan_folds(&c.matrix, &bad).is_err());
}

#[test]
fn estimators_need_their_architectures() {
    let c = corpus(5);
    for (archs, est) in [
        (vec![Architecture::MultiTask], Estimator::Softmax),
        (vec![Architecture::MultiTask], Estimator::McDropout),
        (vec![Architecture::Baseline], Estimator::AnnotationVariance),
    ] {
        let cfg = experiment(
            archs,
            vec![est],
            EvalMode::Cv {
                iterations: 1,
                k: 2,
            },
        );
        assert!(matches!(
            run_experiment(&c.matrix, None, &cfg, 1, |_, _| Ok(())),
            Err(Error::Config(_))
        ));
    }
    let none = experiment(
        vec![],
        vec![],
        EvalMode::Cv {
            iterations: 1,
            k: 2,
        },
    );
    assert!(matches!(none.validate(), Err(Error::Config(_))));
}

#[test]
fn failures_carry_fold_provenance() {
    let c = corpus(6);
    let cfg = experiment(
        vec![Architecture::Baseline],
        vec![],
        EvalMode::Cv {
            iterations: 1,
            k: 2,
        },
    );
    let err = run_experiment(&c.matrix, None, &cfg, 1, |fold, _| {
        if fold.fold == 1 {
            Err(Error::Training("stop".into()))
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert!(matches!(err, Error::Training(_)), "{err:?}");

    let mut bad = cfg.clone();
    bad.train.learning_rate = f64::INFINITY;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let fold = plan_folds(&c.matrix, &cfg).unwrap().remove(1);
    let err = train_run(
        &c.matrix,
        &fold,
        RunKind::Model(Architecture::Baseline),
        &bad,
    )
    .unwrap_err();
    match err {
        Error::Fold {
            iteration,
            fold,
            ref architecture,
            ref source,
        } => {
            assert_eq!((iteration, fold, architecture.as_str()), (0, 1, "baseline"));
            assert!(matches!(**source, Error::Config(_)));
            assert_eq!(err.kind(), "config");
        }
        other => panic!("expected fold provenance, got {other:?}"),
    }
}
