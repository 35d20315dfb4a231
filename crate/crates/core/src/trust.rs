//! Question-answer trust of softmax predictions, per-class trust densities
//! and the per-class net trust score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assess::PooledPrediction;
use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 256;
const MIN_BANDWIDTH: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub trial_id: String,
    pub true_class: usize,
    pub predicted_class: usize,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn new(trial_id: impl Into<String>, true_class: usize, predicted_class: usize, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Domain(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            trial_id: trial_id.into(),
            true_class,
            predicted_class,
            confidence,
        })
    }

    /// From a held-out classification prediction.
    pub fn from_pooled(p: &PooledPrediction) -> Result<Self> {
        let probs = p
            .probabilities
            .as_ref()
            .ok_or_else(|| Error::arg(format!("trial {} has no class probabilities", p.trial_id)))?;
        let predicted = p
            .predicted_class
            .ok_or_else(|| Error::arg(format!("trial {} has no predicted class", p.trial_id)))?;
        Self::new(p.trial_id.clone(), p.label, predicted, probs[predicted])
    }

    pub fn is_correct(&self) -> bool {
        self.true_class == self.predicted_class
    }
}

/// `confidence^α` when correct, `(1 − confidence)^β` when wrong.
pub fn qa_trust(record: &PredictionRecord, alpha: f64, beta: f64) -> f64 {
    if record.is_correct() {
        record.confidence.powf(alpha)
    } else {
        (1.0 - record.confidence).powf(beta)
    }
}

/// A density sampled on an evenly spaced grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Density {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Grid points that are not lower than their neighbours and strictly
    /// higher than at least one, endpoints included.
    pub fn local_maxima(&self) -> Vec<f64> {
        let v = &self.values;
        let n = v.len();
        (0..n)
            .filter(|&i| {
                let left = if i > 0 { Some(v[i - 1]) } else { None };
                let right = if i + 1 < n { Some(v[i + 1]) } else { None };
                let ge = left.is_none_or(|l| v[i] >= l) && right.is_none_or(|r| v[i] >= r);
                let gt_left = left.is_none_or(|l| v[i] > l);
                let gt_right = right.is_none_or(|r| v[i] > r);
                ge && gt_left && gt_right
            })
            .map(|i| self.grid[i])
            .collect()
    }

    pub fn argmax(&self) -> f64 {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        self.grid[i]
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Gaussian kernel density of values in `[0, 1]` with reflection at both
/// boundaries and Silverman's bandwidth, renormalized on the grid.
pub fn trust_density(trusts: &[f64]) -> Result<Density> {
    let n = trusts.len();
    if n < 2 {
        return Err(Error::arg(format!("a density needs at least 2 values, got {n}")));
    }
    if trusts.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Domain("trust values must lie in [0, 1]".into()));
    }
    let (_, sd) = crate::assess::mean_std(trusts).expect("non-empty");
    let h = (sd * (4.0 / (3.0 * n as f64)).powf(0.2)).max(MIN_BANDWIDTH);
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64).collect();
    let kernel = |u: f64| (-0.5 * u * u).exp();
    let values: Vec<f64> = grid
        .iter()
        .map(|&x| {
            trusts
                .iter()
                .map(|&t| kernel((x - t) / h) + kernel((x + t) / h) + kernel((x - (2.0 - t)) / h))
                .sum::<f64>()
        })
        .collect();
    let mut density = Density { grid, values };
    let area = density.integral();
    density.values.iter_mut().for_each(|v| *v /= area);
    Ok(density)
}

/// Mean trust per true class; `None` for classes without samples.
pub fn net_trust_score(records: &[PredictionRecord], n_classes: usize, correct_only: bool) -> Vec<Option<f64>> {
    let mut sums = vec![(0.0, 0usize); n_classes];
    for r in records.iter().filter(|r| !correct_only || r.is_correct()) {
        if let Some(slot) = sums.get_mut(r.true_class) {
            slot.0 += qa_trust(r, 1.0, 1.0);
            slot.1 += 1;
        }
    }
    sums.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustSpectrum {
    pub per_class_trusts: BTreeMap<usize, Vec<f64>>,
    /// Missing where a class has fewer than two samples.
    pub densities: BTreeMap<usize, Option<Density>>,
    pub nts: BTreeMap<usize, Option<f64>>,
    pub nts_correct_only: BTreeMap<usize, Option<f64>>,
}

pub fn trust_spectrum(records: &[PredictionRecord], n_classes: usize) -> Result<TrustSpectrum> {
    if let Some(bad) = records.iter().find(|r| r.true_class >= n_classes || r.predicted_class >= n_classes) {
        return Err(Error::arg(format!("trial {} has a class index out of range", bad.trial_id)));
    }
    let mut per_class_trusts: BTreeMap<usize, Vec<f64>> = (0..n_classes).map(|c| (c, Vec::new())).collect();
    for r in records {
        per_class_trusts.get_mut(&r.true_class).expect("validated").push(qa_trust(r, 1.0, 1.0));
    }
    let densities = per_class_trusts
        .iter()
        .map(|(&c, t)| Ok((c, if t.len() >= 2 { Some(trust_density(t)?) } else { None })))
        .collect::<Result<_>>()?;
    let collect = |v: Vec<Option<f64>>| v.into_iter().enumerate().collect::<BTreeMap<_, _>>();
    Ok(TrustSpectrum {
        per_class_trusts,
        densities,
        nts: collect(net_trust_score(records, n_classes, false)),
        nts_correct_only: collect(net_trust_score(records, n_classes, true)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: usize, p: usize, c: f64) -> PredictionRecord {
        PredictionRecord::new("x", t, p, c).unwrap()
    }

    #[test]
    fn trust_values() {
        assert_eq!(qa_trust(&rec(1, 1, 1.0), 1.0, 1.0), 1.0);
        assert_eq!(qa_trust(&rec(0, 1, 1.0), 1.0, 1.0), 0.0);
        assert_eq!(qa_trust(&rec(0, 0, 0.7), 1.0, 1.0), 0.7);
        assert!(PredictionRecord::new("x", 0, 0, 1.2).is_err());
    }

    #[test]
    fn nts_is_the_mean_trust() {
        let records = [rec(0, 0, 1.0), rec(0, 0, 1.0), rec(0, 1, 0.2)];
        let nts = net_trust_score(&records, 2, false);
        assert!((nts[0].unwrap() - 0.9333333333333333).abs() < 1e-12);
        assert_eq!(nts[1], None);
        assert_eq!(net_trust_score(&records, 2, true)[0], Some(1.0));
    }

    #[test]
    fn point_mass_peaks_at_value() {
        let d = trust_density(&[0.9; 10]).unwrap();
        assert!((d.argmax() - 0.9).abs() <= 1.0 / 255.0);
        assert!((d.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bimodal_has_two_peaks() {
        let mut t = vec![0.1; 20];
        t.extend(vec![0.9; 20]);
        let d = trust_density(&t).unwrap();
        let peaks = d.local_maxima();
        // Bandwidth ≈ 0.205 and the boundary reflection move both modes onto
        // the ends of the interval (checked against an independent KDE).
        assert_eq!(peaks, vec![0.0, 1.0]);
        let mid = d.values[127];
        assert!(mid < d.values[0] && mid < d.values[255]);
    }

    #[test]
    fn boundary_mass_is_kept() {
        let d = trust_density(&[1.0, 1.0, 0.99, 0.98]).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-3);
        assert_eq!(d.argmax(), 1.0);
        assert!(trust_density(&[0.5]).is_err());
    }

    #[test]
    fn spectrum_covers_all_classes() {
        let records = [rec(0, 0, 0.8), rec(0, 1, 0.6), rec(0, 0, 0.9), rec(1, 1, 0.95)];
        let s = trust_spectrum(&records, 2).unwrap();
        assert_eq!(s.per_class_trusts[&0].len(), 3);
        assert!(s.densities[&0].is_some());
        assert!(s.densities[&1].is_none());
        assert_eq!(s.nts[&1], Some(0.95));
        assert!(trust_spectrum(&records, 1).is_err());
    }

    fn record_strategy() -> impl Strategy<Value = PredictionRecord> {
        (0usize..2, 0usize..2, 0.0f64..=1.0).prop_map(|(t, p, c)| rec(t, p, c))
    }

    proptest! {
        #[test]
        fn closed_form_and_range(records in prop::collection::vec(record_strategy(), 1..40)) {
            let nts = net_trust_score(&records, 2, false);
            for class in 0..2 {
                let members: Vec<_> = records.iter().filter(|r| r.true_class == class).collect();
                match nts[class] {
                    None => prop_assert!(members.is_empty()),
                    Some(v) => {
                        let closed: f64 = members
                            .iter()
                            .map(|r| if r.is_correct() { r.confidence } else { 1.0 - r.confidence })
                            .sum::<f64>() / members.len() as f64;
                        prop_assert!((v - closed).abs() < 1e-12);
                        prop_assert!((0.0..=1.0).contains(&v));
                    }
                }
            }
            let mut reversed = records.clone();
            reversed.reverse();
            let again = net_trust_score(&reversed, 2, false);
            for (a, b) in nts.iter().zip(&again) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (a, b) => prop_assert_eq!(a, b),
                }
            }
        }

        #[test]
        fn trust_is_monotone(c1 in 0.0f64..=1.0, c2 in 0.0f64..=1.0) {
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            prop_assert!(qa_trust(&rec(0, 0, lo), 1.0, 1.0) <= qa_trust(&rec(0, 0, hi), 1.0, 1.0));
            prop_assert!(qa_trust(&rec(0, 1, lo), 1.0, 1.0) >= qa_trust(&rec(0, 1, hi), 1.0, 1.0));
        }

        #[test]
        fn density_is_normalized(t in prop::collection::vec(0.0f64..=1.0, 2..50)) {
            let d = trust_density(&t).unwrap();
            prop_assert!(d.values.iter().all(|v| *v >= 0.0));
            prop_assert!((d.integral() - 1.0).abs() < 1e-3);
        }
    }
}
