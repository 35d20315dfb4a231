//! fNIRS preprocessing: raw two-wavelength intensities to clean, resampled,
//! normalized ΔHbO channels.
//!
//! The stages are intended to run in this order:
//! [`optical_density`] → [`bandpass_filter`] → [`spline_motion_correct`] →
//! [`mbll_convert`] → [`resample_uniform`] → [`minmax_normalize`].

mod butterworth;
mod mbll;
mod spline;

use std::ops::Range;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use butterworth::{bandpass_filter, ButterworthBandpass, Sos};
pub use mbll::{mbll_convert, MbllParams};
pub use spline::{smoothing_spline, spline_motion_correct, SplineConfig};

/// Raw detector intensities for one source-detector channel, `T × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySeries<F> {
    pub samples: Array2<F>,
    pub sample_rate_hz: f64,
    pub wavelengths_nm: Vec<f64>,
    pub channel_id: String,
}

/// Optical density per wavelength, same shape as the intensities it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct OdSeries<F> {
    pub samples: Array2<F>,
    pub sample_rate_hz: f64,
    pub wavelengths_nm: Vec<f64>,
}

/// Hemoglobin concentration changes in µM.
#[derive(Debug, Clone, PartialEq)]
pub struct HemoSeries<F> {
    pub delta_hbo: Vec<F>,
    pub delta_hbr: Vec<F>,
    pub sample_rate_hz: f64,
    pub channel_id: String,
}

impl<F: Scalar> IntensitySeries<F> {
    pub fn new(
        samples: Array2<F>,
        sample_rate_hz: f64,
        wavelengths_nm: Vec<f64>,
        channel_id: impl Into<String>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::arg("sample rate must be positive"));
        }
        if wavelengths_nm.len() != samples.ncols() {
            return Err(Error::arg(format!(
                "{} wavelengths for {} intensity columns",
                wavelengths_nm.len(),
                samples.ncols()
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            wavelengths_nm,
            channel_id: channel_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }
}

impl<F: Scalar> OdSeries<F> {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    /// Applies `f` to every wavelength column independently.
    pub(crate) fn map_columns(
        &self,
        mut f: impl FnMut(&[F]) -> Result<Vec<F>>,
    ) -> Result<OdSeries<F>> {
        let mut out = self.samples.clone();
        for (w, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let input: Vec<F> = self.samples.column(w).to_vec();
            let filtered = f(&input)?;
            debug_assert_eq!(filtered.len(), input.len());
            for (dst, src) in col.iter_mut().zip(filtered) {
                *dst = src;
            }
        }
        Ok(OdSeries {
            samples: out,
            sample_rate_hz: self.sample_rate_hz,
            wavelengths_nm: self.wavelengths_nm.clone(),
        })
    }
}

/// Sample range covering the first `seconds` of a series, clipped to its length.
pub fn leading_window(sample_rate_hz: f64, seconds: f64, len: usize) -> Range<usize> {
    let n = (seconds * sample_rate_hz).round().max(1.0) as usize;
    0..n.min(len)
}

/// `OD[t][w] = -log10(I[t][w] / mean(I[baseline][w]))`.
pub fn optical_density<F: Scalar>(
    intensity: &IntensitySeries<F>,
    baseline: Range<usize>,
) -> Result<OdSeries<F>> {
    if baseline.is_empty() {
        return Err(Error::arg("baseline window is empty"));
    }
    if baseline.end > intensity.len() {
        return Err(Error::arg(format!(
            "baseline window {:?} exceeds series length {}",
            baseline,
            intensity.len()
        )));
    }
    if let Some(bad) = intensity.samples.iter().find(|&&v| !(v > F::zero())) {
        return Err(Error::Domain(format!(
            "intensity must be positive, found {bad}"
        )));
    }

    let n_base = F::from_count(baseline.len());
    let mut samples = intensity.samples.clone();
    for (w, mut col) in samples.axis_iter_mut(Axis(1)).enumerate() {
        let reference = intensity
            .samples
            .slice(ndarray::s![baseline.clone(), w])
            .sum()
            / n_base;
        col.mapv_inplace(|v| -(v / reference).log10());
    }
    Ok(OdSeries {
        samples,
        sample_rate_hz: intensity.sample_rate_hz,
        wavelengths_nm: intensity.wavelengths_nm.clone(),
    })
}

/// Number of samples produced by [`resample_uniform`].
pub fn resampled_len(len: usize, source_hz: f64, target_hz: f64) -> usize {
    let duration = (len - 1) as f64 / source_hz;
    // Tolerance guards against products like 78 / 7.8125 * 1.0 landing a hair
    // below an integer.
    (duration * target_hz + 1e-9).floor() as usize + 1
}

/// Linear-interpolation resampling of every column onto the grid
/// `0, 1/target_hz, 2/target_hz, …` up to the last source timestamp.
pub fn resample_uniform<F: Scalar>(
    data: &Array2<F>,
    source_hz: f64,
    target_hz: f64,
) -> Result<Array2<F>> {
    if !(target_hz > 0.0) || !(source_hz > 0.0) {
        return Err(Error::arg("sample rates must be positive"));
    }
    let t = data.nrows();
    if t < 2 {
        return Err(Error::arg(format!("need at least 2 samples to resample, got {t}")));
    }
    let n_out = resampled_len(t, source_hz, target_hz);
    let step = source_hz / target_hz;
    let mut out = Array2::zeros((n_out, data.ncols()));
    for k in 0..n_out {
        let pos = k as f64 * step;
        let i0 = (pos.floor() as usize).min(t - 1);
        let frac = pos - i0 as f64;
        if i0 + 1 >= t || frac == 0.0 {
            out.row_mut(k).assign(&data.row(i0));
        } else {
            let w = F::lit(frac);
            for c in 0..data.ncols() {
                let a = data[[i0, c]];
                let b = data[[i0 + 1, c]];
                out[[k, c]] = a + (b - a) * w;
            }
        }
    }
    Ok(out)
}

/// Per-column min-max scaling to `[0, 1]`; constant columns become 0.5.
pub fn minmax_normalize<F: Scalar>(data: &Array2<F>) -> Array2<F> {
    let mut out = data.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let (lo, hi) = col
            .iter()
            .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        if range > F::zero() {
            col.mapv_inplace(|v| (v - lo) / range);
        } else {
            col.fill(F::lit(0.5));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn series(cols: Vec<Vec<f64>>) -> IntensitySeries<f64> {
        let t = cols[0].len();
        let w = cols.len();
        let data = Array2::from_shape_fn((t, w), |(i, j)| cols[j][i]);
        IntensitySeries::new(data, 7.8125, vec![760.0, 850.0][..w].to_vec(), "S1D1").unwrap()
    }

    #[test]
    fn constant_intensity_has_zero_od() {
        let s = series(vec![vec![3.0; 20], vec![5.0; 20]]);
        let od = optical_density(&s, 0..5).unwrap();
        assert!(od.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tenth_of_baseline_is_unit_od() {
        let mut c = vec![2.0; 10];
        c[7] = 0.2;
        let s = series(vec![c.clone(), c]);
        let od = optical_density(&s, 0..5).unwrap();
        assert!((od.samples[[7, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn half_of_baseline_is_log10_two() {
        let mut c = vec![2.0; 10];
        c[9] = 1.0;
        let s = series(vec![c.clone(), c]);
        let od = optical_density(&s, 0..5).unwrap();
        assert!((od.samples[[9, 1]] - 2f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn od_errors() {
        let s = series(vec![vec![1.0, 0.0, 1.0], vec![1.0; 3]]);
        assert!(matches!(optical_density(&s, 0..1), Err(Error::Domain(_))));
        let s = series(vec![vec![1.0; 3], vec![1.0; 3]]);
        assert!(matches!(optical_density(&s, 1..1), Err(Error::Argument(_))));
        assert!(matches!(optical_density(&s, 0..4), Err(Error::Argument(_))));
    }

    #[test]
    fn baseline_mean_of_od_is_zero() {
        let c: Vec<f64> = (0..40).map(|i| 1.0 + 0.02 * (i as f64 * 0.7).sin()).collect();
        let s = series(vec![c.clone(), c.iter().map(|v| v * 3.0).collect()]);
        let od = optical_density(&s, 0..16).unwrap();
        for w in 0..2 {
            // mean of -log10(I/m) is not exactly 0 (Jensen), but is tiny for
            // small fluctuations
            let m: f64 = od.samples.slice(ndarray::s![0..16, w]).mean().unwrap();
            assert!(m.abs() < 1e-3, "{m}");
        }
    }

    #[test]
    fn resample_identity_at_source_rate() {
        let data = Array2::from_shape_fn((50, 3), |(i, j)| (i * 7 + j) as f64 * 0.37);
        let out = resample_uniform(&data, 7.8125, 7.8125).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn resample_ramp_is_exact() {
        let fs = 7.8125;
        let data = Array2::from_shape_fn((79, 1), |(i, _)| i as f64 / fs);
        let out = resample_uniform(&data, fs, 1.0).unwrap();
        assert_eq!(out.nrows(), 10);
        for (k, v) in out.column(0).iter().enumerate() {
            assert!((v - k as f64).abs() < 1e-12, "{k}: {v}");
        }
    }

    #[test]
    fn resample_length_formula() {
        // duration = 78 / 7.8125 = 9.984 s → samples at 0..=9 s
        assert_eq!(resampled_len(79, 7.8125, 1.0), 10);
        assert_eq!(resampled_len(80, 7.8125, 1.0), 11);
        assert_eq!(resampled_len(2, 1.0, 1.0), 2);
        assert!(resample_uniform(&Array2::<f64>::zeros((1, 2)), 1.0, 1.0).is_err());
    }

    #[test]
    fn minmax_examples() {
        let x = array![[0.0, 3.0, 0.0], [1.0, 3.0, 1.0], [2.0, 3.0, 1.0]];
        let y = minmax_normalize(&x);
        assert_eq!(y.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(y.column(1).to_vec(), vec![0.5, 0.5, 0.5]);
        assert_eq!(y.column(2).to_vec(), vec![0.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn od_is_scale_invariant(k in 0.01f64..100.0, seed in 0u64..1000) {
            let c: Vec<f64> = (0..30).map(|i| 1.0 + ((i as u64 * 31 + seed) % 17) as f64).collect();
            let s = series(vec![c.clone(), c.clone()]);
            let scaled = series(vec![c.iter().map(|v| v * k).collect(), c.iter().map(|v| v * k).collect()]);
            let a = optical_density(&s, 0..10).unwrap();
            let b = optical_density(&scaled, 0..10).unwrap();
            for (x, y) in a.samples.iter().zip(b.samples.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn minmax_bounded_and_idempotent(v in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let x = Array2::from_shape_vec((v.len(), 1), v).unwrap();
            let once = minmax_normalize(&x);
            prop_assert!(once.iter().all(|&y| (0.0..=1.0).contains(&y)));
            let twice = minmax_normalize(&once);
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
