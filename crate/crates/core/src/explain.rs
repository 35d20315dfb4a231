//! Class activation maps over the task timeline and their comparison
//! across modalities.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestream::{Modality, SpatioTemporalMatrix};
use crate::nnet::TrainedModel;
use crate::scalar::Scalar;

pub const DEFAULT_CURVE_LEN: usize = 100;

/// `CAM(t) = Σ_k W[class][k] · A_k(t)` over the pre-pooling feature maps.
/// Regression models use output index 0.
pub fn compute_cam<F: Scalar>(model: &TrainedModel<F>, x: &SpatioTemporalMatrix<F>, class_index: usize) -> Result<Vec<F>> {
    let net = model.network()?;
    let pass = net.forward(&model.parameters, &x.data)?;
    net.class_activation(&model.parameters, &pass, class_index)
}

/// Weighted sum of feature map columns.
pub fn cam_from_features<F: Scalar>(features: &Array2<F>, weights: &[F]) -> Result<Vec<F>> {
    if features.ncols() != weights.len() {
        return Err(Error::arg(format!(
            "{} feature maps but {} weights",
            features.ncols(),
            weights.len()
        )));
    }
    Ok(features.dot(&ndarray::ArrayView1::from(weights)).to_vec())
}

/// A CAM on a fixed percent-of-task grid, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamCurve {
    pub values: Vec<f64>,
    pub class_or_head: String,
    pub modality: Modality,
    pub n_trials_averaged: usize,
    /// Set for fused inputs, where time steps mix both modalities' channels.
    pub interpretation_limited: bool,
}

fn minmax(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Linear interpolation of `values` onto `len` evenly spaced positions that
/// span the same interval.
fn resample_linear(values: &[f64], len: usize) -> Vec<f64> {
    let last = (values.len() - 1) as f64;
    (0..len)
        .map(|i| {
            let pos = if len == 1 { 0.0 } else { i as f64 * last / (len - 1) as f64 };
            let lo = (pos.floor() as usize).min(values.len() - 1);
            let hi = (lo + 1).min(values.len() - 1);
            let frac = pos - lo as f64;
            values[lo] + frac * (values[hi] - values[lo])
        })
        .collect()
}

/// Min-max scales a CAM (a constant CAM becomes 0.5) and resamples it to
/// `len` points.
pub fn normalize_resample_cam<F: Scalar>(
    cam: &[F],
    len: usize,
    class_or_head: impl Into<String>,
    modality: Modality,
) -> Result<CamCurve> {
    if cam.len() < 2 || len < 2 {
        return Err(Error::arg(format!(
            "CAM resampling needs at least 2 input and output points, got {} -> {len}",
            cam.len()
        )));
    }
    let raw: Vec<f64> = cam.iter().map(|v| v.as_f64()).collect();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("CAM contains non-finite values".into()));
    }
    Ok(CamCurve {
        values: resample_linear(&minmax(&raw), len),
        class_or_head: class_or_head.into(),
        modality,
        n_trials_averaged: 1,
        interpretation_limited: modality == Modality::Fused,
    })
}

/// Point-wise mean of equally long curves.
pub fn average_curves(curves: &[CamCurve]) -> Result<CamCurve> {
    let first = curves.first().ok_or_else(|| Error::arg("no curves to average"))?;
    let len = first.values.len();
    if curves.iter().any(|c| c.values.len() != len) {
        return Err(Error::arg("curves to average differ in length"));
    }
    let n = curves.iter().map(|c| c.n_trials_averaged).sum::<usize>();
    let values = (0..len)
        .map(|i| curves.iter().map(|c| c.values[i] * c.n_trials_averaged as f64).sum::<f64>() / n as f64)
        .collect();
    Ok(CamCurve {
        values,
        class_or_head: first.class_or_head.clone(),
        modality: first.modality,
        n_trials_averaged: n,
        interpretation_limited: curves.iter().any(|c| c.interpretation_limited),
    })
}

/// 1-based ranks with ties sharing their mean rank.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation as the Pearson correlation of mid-ranks. `None`
/// when undefined: mismatched or short inputs, or a constant input.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 3 || a.iter().chain(b).any(|v| !v.is_finite()) {
        return None;
    }
    let (ra, rb) = (mid_ranks(a), mid_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of paired per-trial curves.
pub fn per_trial_rho(a: &[CamCurve], b: &[CamCurve]) -> Vec<Option<f64>> {
    a.iter().zip(b).map(|(x, y)| spearman_rho(&x.values, &y.values)).collect()
}

/// A minimal SVG line chart of curves over percent of task time.
pub fn render_svg(title: &str, series: &[(&str, &[f64])]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const M: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let escape = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{M} {M} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">task time (%)</text>"#, W / 2.0, H - 8.0);
    for (k, (name, values)) in series.iter().enumerate() {
        if values.len() < 2 {
            continue;
        }
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = M + (W - 2.0 * M) * i as f64 / (values.len() - 1) as f64;
                let y = H - M - (H - 2.0 * M) * v.clamp(0.0, 1.0);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - M - 120.0,
            M + 14.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn weighted_feature_maps() {
        let a = array![[1.0, 0.5], [2.0, 3.0], [0.0, -1.0]];
        assert_eq!(cam_from_features(&a, &[1.0, -1.0]).unwrap(), vec![0.5, -1.0, 1.0]);
        assert_eq!(cam_from_features(&a, &[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert!(cam_from_features(&a, &[1.0]).is_err());
    }

    #[test]
    fn cam_is_linear_in_weights() {
        let a = Array2::from_shape_fn((9, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let (w1, w2) = ([0.3, -1.2, 2.0], [1.1, 0.4, -0.7]);
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let c1 = cam_from_features(&a, &w1).unwrap();
        let c2 = cam_from_features(&a, &w2).unwrap();
        for (t, c) in cam_from_features(&a, &sum).unwrap().iter().enumerate() {
            assert!((c - c1[t] - c2[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_rules() {
        let c = normalize_resample_cam(&[2.0, 2.0, 2.0], 5, "Pass", Modality::Neural).unwrap();
        assert_eq!(c.values, vec![0.5; 5]);
        let c = normalize_resample_cam(&[1.0, 3.0, 2.0, 5.0], 4, "Pass", Modality::Motor).unwrap();
        assert_eq!(c.values, vec![0.0, 0.5, 0.25, 1.0]);
        assert!(normalize_resample_cam(&[1.0], 10, "x", Modality::Motor).is_err());
        assert!(normalize_resample_cam(&[0.0, 1.0], 10, "x", Modality::Fused).unwrap().interpretation_limited);
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman_rho(&a, &a), Some(1.0));
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(spearman_rho(&a, &rev), Some(-1.0));
        // Ranks of b are [1, 2, 3.5, 5, 3.5]; by hand the correlation is
        // 8 / sqrt(95).
        let rho = spearman_rho(&a, &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap();
        assert!((rho - 8.0 / 95f64.sqrt()).abs() < 1e-12);
        assert!((rho - 0.8207826816681233).abs() < 1e-12);
        assert_eq!(spearman_rho(&a, &[1.0; 5]), None);
        assert_eq!(spearman_rho(&a, &a[..4]), None);
    }

    #[test]
    fn averaging_identical_curves() {
        let c = normalize_resample_cam(&[0.0, 2.0, 1.0, 4.0], 50, "Surgeon", Modality::Neural).unwrap();
        let avg = average_curves(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert_eq!(avg.n_trials_averaged, 3);
        for (a, b) in avg.values.iter().zip(&c.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn svg_contains_each_series() {
        let svg = render_svg("A & B", &[("neural", &[0.0, 1.0, 0.5]), ("motor", &[1.0, 0.0, 0.2])]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("A &amp; B"));
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(a in prop::collection::vec(-10.0f64..10.0, 3..30), seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.3 + ((i as u64 * 31 + seed) % 17) as f64).collect();
            let rho = spearman_rho(&a, &b);
            let transformed: Vec<f64> = a.iter().map(|v| v.exp() * 2.0 + 1.0).collect();
            let rho_t = spearman_rho(&transformed, &b);
            match (rho, rho_t) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn monotone_cam_stays_monotone(mut v in prop::collection::vec(-5.0f64..5.0, 2..40), len in 2usize..150) {
            v.sort_by(f64::total_cmp);
            let c = normalize_resample_cam(&v, len, "x", Modality::Neural).unwrap();
            prop_assert!(c.values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            prop_assert!(c.values.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn same_length_resample_is_identity(v in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let c = normalize_resample_cam(&v, v.len(), "x", Modality::Neural).unwrap();
            let expected = minmax(&v);
            for (a, b) in c.values.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
