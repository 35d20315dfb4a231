use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestream::TrialRecord;

/// One leave-one-user-out split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub train_trials: Vec<String>,
    pub val_trials: Vec<String>,
}

/// Trial indices per subject, subjects in sorted order.
pub(crate) fn subject_index<F>(trials: &[TrialRecord<F>]) -> BTreeMap<&str, Vec<usize>> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        by_subject.entry(t.subject_id.as_str()).or_default().push(i);
    }
    by_subject
}

/// `(held-out subject, train indices, validation indices)` per fold.
pub(crate) fn fold_indices<F>(trials: &[TrialRecord<F>]) -> Result<Vec<(String, Vec<usize>, Vec<usize>)>> {
    let by_subject = subject_index(trials);
    if by_subject.len() < 2 {
        return Err(Error::arg(format!(
            "leave-one-user-out needs at least 2 subjects, found {}",
            by_subject.len()
        )));
    }
    Ok(by_subject
        .iter()
        .map(|(subject, val)| {
            let train = (0..trials.len()).filter(|i| trials[*i].subject_id != *subject).collect();
            (subject.to_string(), train, val.clone())
        })
        .collect())
}

/// One fold per subject, holding out all of that subject's trials.
pub fn louo_folds<F>(trials: &[TrialRecord<F>]) -> Result<Vec<Fold>> {
    let ids = |idx: &[usize]| idx.iter().map(|&i| trials[i].trial_id.clone()).collect();
    Ok(fold_indices(trials)?
        .into_iter()
        .map(|(subject, train, val)| Fold {
            held_out_subject: subject,
            train_trials: ids(&train),
            val_trials: ids(&val),
        })
        .collect())
}
