//! Leave-one-user-out evaluation, repeated runs and modality comparison.

mod folds;
mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestream::{Modality, SpatioTemporalMatrix, Task, TrialRecord};
use crate::nnet::{self, Head, Prediction, Target, VbaNetConfig};
use crate::scalar::Scalar;

pub use folds::{louo_folds, Fold};
pub use stats::{
    format_mean_std, mann_whitney_greater, mann_whitney_u, mean_std, quantile_sorted, shapiro_wilk,
    significance_test, tukey_fences, welch_t_greater, Direction, StatReport, TestUsed, ALPHA, EXACT_MAX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    RSquared,
    /// Trustworthiness of predictions for trials of one true class.
    NtsClass(usize),
}

impl Metric {
    pub fn for_head(head: Head) -> Self {
        match head {
            Head::Classify { .. } => Metric::Accuracy,
            Head::Regress => Metric::RSquared,
        }
    }

    pub fn name(self) -> String {
        match self {
            Metric::Accuracy => "accuracy".into(),
            Metric::RSquared => "r_squared".into(),
            Metric::NtsClass(k) => format!("nts_class_{k}"),
        }
    }
}

/// One value per repeated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDistribution {
    pub metric: Metric,
    pub modality: Modality,
    pub task: Task,
    pub values: Vec<f64>,
}

/// Model fitting strategy used inside each fold.
pub trait Learner<F: Scalar>: Sync {
    fn fit_predict(
        &self,
        head: Head,
        train: &[(SpatioTemporalMatrix<F>, Target)],
        test: &[SpatioTemporalMatrix<F>],
        seed: u64,
    ) -> Result<Vec<Prediction<F>>>;
}

/// The network learner; the input width and head come from the data and
/// the seed from the fold.
#[derive(Debug, Clone, PartialEq)]
pub struct VbaNetLearner {
    pub config: VbaNetConfig,
}

impl<F: Scalar> Learner<F> for VbaNetLearner {
    fn fit_predict(
        &self,
        head: Head,
        train: &[(SpatioTemporalMatrix<F>, Target)],
        test: &[SpatioTemporalMatrix<F>],
        seed: u64,
    ) -> Result<Vec<Prediction<F>>> {
        let in_channels = train
            .first()
            .map(|(x, _)| x.channels())
            .ok_or_else(|| Error::arg("empty training fold"))?;
        let config = VbaNetConfig {
            in_channels,
            head,
            rng_seed: seed,
            ..self.config.clone()
        };
        let model = nnet::train(&config, train)?;
        test.iter().map(|x| model.predict(x)).collect()
    }
}

/// Held-out prediction for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPrediction {
    pub trial_id: String,
    pub subject_id: String,
    pub label: usize,
    pub score: f64,
    /// Class probabilities (classification only).
    pub probabilities: Option<Vec<f64>>,
    pub predicted_class: Option<usize>,
    pub predicted_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub seed: u64,
    pub metric: Metric,
    pub value: f64,
    pub predictions: Vec<PooledPrediction>,
}

pub fn accuracy(predictions: &[PooledPrediction]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::arg("no predictions to score"));
    }
    let correct = predictions
        .iter()
        .filter(|p| p.predicted_class == Some(p.label))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// `1 − SS_res / SS_tot` on the original score scale.
pub fn r_squared(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::arg("R² needs equal-length, non-empty inputs"));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Domain("R² is undefined for constant targets".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

fn target_for(head: Head, label: usize, score: f64) -> Result<Target> {
    match head {
        Head::Classify { classes } if label < classes => Ok(Target::Class(label)),
        Head::Classify { classes } => Err(Error::arg(format!("label {label} out of range for {classes} classes"))),
        Head::Regress => Ok(Target::Score(score)),
    }
}

/// Trains one model per left-out subject and scores the pooled held-out
/// predictions. Fold `k` trains with seed `derive(seed, k)`.
pub fn run_assessment<F: Scalar, L: Learner<F>>(
    trials: &[TrialRecord<F>],
    modality: Modality,
    head: Head,
    learner: &L,
    seed: u64,
) -> Result<Assessment> {
    let folds = folds::fold_indices(trials)?;
    let inputs: Vec<SpatioTemporalMatrix<F>> = trials.iter().map(|t| t.input(modality)).collect::<Result<_>>()?;
    let targets: Vec<Target> = trials
        .iter()
        .map(|t| target_for(head, t.label, t.score))
        .collect::<Result<_>>()?;

    let per_fold: Vec<Vec<(usize, Prediction<F>)>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, (_, train, val))| {
            let train_set: Vec<_> = train.iter().map(|&i| (inputs[i].clone(), targets[i])).collect();
            let test: Vec<_> = val.iter().map(|&i| inputs[i].clone()).collect();
            let preds = learner.fit_predict(head, &train_set, &test, crate::seed::derive(seed, k as u64))?;
            if preds.len() != val.len() {
                return Err(Error::Numeric("learner returned the wrong number of predictions".into()));
            }
            Ok(val.iter().copied().zip(preds).collect())
        })
        .collect::<Result<_>>()?;

    let mut pooled: Vec<(usize, Prediction<F>)> = per_fold.into_iter().flatten().collect();
    pooled.sort_by_key(|(i, _)| *i);
    let predictions: Vec<PooledPrediction> = pooled
        .into_iter()
        .map(|(i, pred)| {
            let t = &trials[i];
            let mut out = PooledPrediction {
                trial_id: t.trial_id.clone(),
                subject_id: t.subject_id.clone(),
                label: t.label,
                score: t.score,
                probabilities: None,
                predicted_class: None,
                predicted_score: None,
            };
            match pred {
                Prediction::Probabilities(ref p) => {
                    out.predicted_class = pred.argmax().map(|(c, _)| c);
                    out.probabilities = Some(p.iter().map(|v| v.as_f64()).collect());
                }
                Prediction::Score(s) => out.predicted_score = Some(s.as_f64()),
            }
            out
        })
        .collect();

    let metric = Metric::for_head(head);
    let value = match metric {
        Metric::Accuracy => accuracy(&predictions)?,
        _ => {
            let truth: Vec<f64> = predictions.iter().map(|p| p.score).collect();
            let pred: Vec<f64> = predictions
                .iter()
                .map(|p| p.predicted_score.ok_or_else(|| Error::Numeric("missing score prediction".into())))
                .collect::<Result<_>>()?;
            r_squared(&truth, &pred)?
        }
    };
    Ok(Assessment {
        seed,
        metric,
        value,
        predictions,
    })
}

/// `n` assessments with seeds `master_seed + i`, in seed order.
pub fn repeat_assessments<F: Scalar, L: Learner<F>>(
    trials: &[TrialRecord<F>],
    modality: Modality,
    head: Head,
    learner: &L,
    master_seed: u64,
    n: usize,
) -> Result<Vec<Assessment>> {
    if n < 2 {
        return Err(Error::arg(format!("repeated runs need n >= 2, got {n}")));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| run_assessment(trials, modality, head, learner, master_seed.wrapping_add(i)))
        .collect()
}

pub fn repeat_runs<F: Scalar, L: Learner<F>>(
    trials: &[TrialRecord<F>],
    modality: Modality,
    head: Head,
    learner: &L,
    master_seed: u64,
    n: usize,
) -> Result<MetricDistribution> {
    let task = trials.first().map(|t| t.task).ok_or_else(|| Error::arg("no trials"))?;
    let runs = repeat_assessments(trials, modality, head, learner, master_seed, n)?;
    Ok(MetricDistribution {
        metric: Metric::for_head(head),
        modality,
        task,
        values: runs.iter().map(|r| r.value).collect(),
    })
}

/// Mean ± std of a distribution before and after outlier fences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub formatted: String,
    pub n_fenced: usize,
    pub mean_fenced: f64,
    pub std_fenced: f64,
    pub formatted_fenced: String,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let (mean, std) = mean_std(values).ok_or_else(|| Error::arg("empty distribution"))?;
    let fenced = if values.len() >= 4 { tukey_fences(values, 1.5)? } else { values.to_vec() };
    let (mean_fenced, std_fenced) = mean_std(&fenced).ok_or_else(|| Error::arg("empty distribution"))?;
    Ok(Summary {
        n: values.len(),
        mean,
        std,
        formatted: format_mean_std(mean, std),
        n_fenced: fenced.len(),
        mean_fenced,
        std_fenced,
        formatted_fenced: format_mean_std(mean_fenced, std_fenced),
    })
}
