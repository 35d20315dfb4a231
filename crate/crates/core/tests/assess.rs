use cogmotor::assess::{
    louo_folds, mann_whitney_u, r_squared, repeat_runs, run_assessment, significance_test, summarize, tukey_fences,
    Direction, Learner, Metric, VbaNetLearner,
};
use cogmotor::featurestream::{Modality, SpatioTemporalMatrix, Task, TrialRecord};
use cogmotor::nnet::{Head, Prediction, Target, VbaNetConfig};
use cogmotor::Result;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Trials whose first neural cell stores the label and whose second stores
/// the score, so stubs can read the truth back out.
fn trials(subjects: usize, per_subject: usize, seed: u64) -> Vec<TrialRecord<f64>> {
    let mut rng = cogmotor::seed::rng(seed);
    let mut out = Vec::new();
    for s in 0..subjects {
        let fingerprint: f64 = rng.random_range(-1.0..1.0);
        let mut labels: Vec<usize> = (0..per_subject).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        for (k, label) in labels.into_iter().enumerate() {
            let score = 50.0 + 10.0 * label as f64 + rng.random_range(-3.0..3.0);
            let mut neural = Array2::from_elem((12, 2), fingerprint);
            neural[[0, 0]] = label as f64;
            neural[[0, 1]] = score;
            let motor = Array2::from_elem((12, 3), fingerprint);
            out.push(TrialRecord {
                trial_id: format!("s{s}_t{k}"),
                subject_id: format!("s{s}"),
                task: Task::PatternCutting,
                label,
                score,
                neural: SpatioTemporalMatrix::with_prefix(neural, 1.0, "n", Modality::Neural).unwrap(),
                motor: SpatioTemporalMatrix::with_prefix(motor, 1.0, "m", Modality::Motor).unwrap(),
            });
        }
    }
    out
}

struct Oracle;

impl Learner<f64> for Oracle {
    fn fit_predict(
        &self,
        head: Head,
        _: &[(SpatioTemporalMatrix<f64>, Target)],
        test: &[SpatioTemporalMatrix<f64>],
        _: u64,
    ) -> Result<Vec<Prediction<f64>>> {
        Ok(test
            .iter()
            .map(|x| match head {
                Head::Classify { .. } => {
                    let l = x.data[[0, 0]];
                    Prediction::Probabilities(vec![1.0 - l, l])
                }
                Head::Regress => Prediction::Score(x.data[[0, 1]]),
            })
            .collect())
    }
}

/// Predicts a fixed score for every trial.
struct Constant(f64);

impl Learner<f64> for Constant {
    fn fit_predict(
        &self,
        _: Head,
        _: &[(SpatioTemporalMatrix<f64>, Target)],
        test: &[SpatioTemporalMatrix<f64>],
        _: u64,
    ) -> Result<Vec<Prediction<f64>>> {
        Ok(test.iter().map(|_| Prediction::Score(self.0)).collect())
    }
}

#[test]
fn folds_partition_trials_by_subject() {
    let data = trials(7, 4, 1);
    let folds = louo_folds(&data).unwrap();
    assert_eq!(folds.len(), 7);
    let mut seen = Vec::new();
    for fold in &folds {
        assert_eq!(fold.train_trials.len() + fold.val_trials.len(), data.len());
        for id in &fold.val_trials {
            assert!(id.starts_with(&format!("{}_", fold.held_out_subject)));
            assert!(!fold.train_trials.contains(id));
        }
        assert!(fold.train_trials.iter().all(|id| !id.starts_with(&format!("{}_", fold.held_out_subject))));
        seen.extend(fold.val_trials.iter().cloned());
    }
    seen.sort();
    let mut all: Vec<_> = data.iter().map(|t| t.trial_id.clone()).collect();
    all.sort();
    assert_eq!(seen, all);
    assert!(louo_folds(&trials(1, 4, 1)).is_err());
}

#[test]
fn perfect_predictor_scores_one() {
    let data = trials(4, 6, 2);
    let acc = run_assessment(&data, Modality::Neural, Head::Classify { classes: 2 }, &Oracle, 0).unwrap();
    assert_eq!((acc.metric, acc.value), (Metric::Accuracy, 1.0));
    let r2 = run_assessment(&data, Modality::Neural, Head::Regress, &Oracle, 0).unwrap();
    assert_eq!((r2.metric, r2.value), (Metric::RSquared, 1.0));
    assert_eq!(r2.predictions.len(), data.len());
}

#[test]
fn mean_predictor_scores_zero() {
    let data = trials(4, 6, 3);
    let mean = data.iter().map(|t| t.score).sum::<f64>() / data.len() as f64;
    let r = run_assessment(&data, Modality::Motor, Head::Regress, &Constant(mean), 0).unwrap();
    assert!(r.value.abs() < 1e-12);
    let other = run_assessment(&data, Modality::Motor, Head::Regress, &Constant(mean + 4.0), 0).unwrap();
    assert!(other.value < 0.0);
    assert!(r_squared(&[1.0, 1.0], &[1.0, 1.0]).is_err());
}

#[test]
fn repeated_deterministic_stub_is_constant() {
    let data = trials(3, 4, 4);
    let d = repeat_runs(&data, Modality::Fused, Head::Classify { classes: 2 }, &Oracle, 10, 3).unwrap();
    assert_eq!(d.values, vec![1.0; 3]);
    assert_eq!(d.modality, Modality::Fused);
    assert!(repeat_runs(&data, Modality::Fused, Head::Regress, &Oracle, 10, 1).is_err());
}

fn small_learner() -> VbaNetLearner {
    VbaNetLearner {
        config: VbaNetConfig {
            conv_filters: 8,
            se_reduction: 4,
            max_epochs: 30,
            patience: 5,
            ..VbaNetConfig::new(1, Head::Regress)
        },
    }
}

#[test]
fn repeated_runs_reproduce_bit_exactly() {
    let data = trials(3, 4, 5);
    let learner = small_learner();
    let a = repeat_runs(&data, Modality::Motor, Head::Regress, &learner, 77, 3).unwrap();
    let b = repeat_runs(&data, Modality::Motor, Head::Regress, &learner, 77, 3).unwrap();
    assert_eq!(
        a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn subject_fingerprint_does_not_leak() {
    // Labels are balanced within each subject, so nothing constant per
    // subject predicts them; pooled accuracy must sit near chance.
    // The motor stream carries only the subject fingerprint.
    let data = trials(8, 10, 6);
    let learner = VbaNetLearner {
        config: VbaNetConfig {
            max_epochs: 60,
            ..small_learner().config
        },
    };
    let r = run_assessment(&data, Modality::Motor, Head::Classify { classes: 2 }, &learner, 3).unwrap();
    let sigma = (0.25 / data.len() as f64).sqrt();
    assert!((r.value - 0.5).abs() <= 3.0 * sigma, "accuracy {}", r.value);
}

#[test]
fn summaries_report_both_views() {
    let mut v: Vec<f64> = (0..20).map(|i| 0.88 + 0.001 * i as f64).collect();
    v.push(0.2);
    let s = summarize(&v).unwrap();
    assert_eq!(s.n, 21);
    assert_eq!(s.n_fenced, 20);
    assert!(s.mean < s.mean_fenced);
    assert_eq!(s.formatted_fenced, "0.890±.006");
}

proptest! {
    #[test]
    fn u_equals_pairwise_count(
        a in prop::collection::vec(0u8..6, 1..=12),
        b in prop::collection::vec(0u8..6, 1..=12),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let mut pairwise = 0.0;
        for x in &a {
            for y in &b {
                pairwise += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        prop_assert_eq!(mann_whitney_u(&a, &b), pairwise);
    }

    #[test]
    fn comparison_is_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 6..30),
        b in prop::collection::vec(-5.0f64..5.0, 6..30),
    ) {
        let ab = significance_test(&a, &b).unwrap();
        let ba = significance_test(&b, &a).unwrap();
        let means_differ = {
            let fa = tukey_fences(&a, 1.5).unwrap();
            let fb = tukey_fences(&b, 1.5).unwrap();
            let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            m(&fa) != m(&fb)
        };
        prop_assume!(means_differ);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!(ab.test_used, ba.test_used);
        prop_assert_ne!(ab.direction, ba.direction);
        prop_assert_eq!(ab.significant, ab.p_value < 0.05);
        prop_assert!(matches!(ab.direction, Direction::AGreater | Direction::BGreater));
    }
}
