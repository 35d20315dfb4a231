//! Raw trial streams to model-ready 1 Hz matrices.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestream::{channel_group_gap, Modality, SpatioTemporalMatrix, TrialRecord};
use crate::scalar::Scalar;
use crate::signalproc::{
    bandpass_filter, leading_window, mbll_convert, minmax_normalize, optical_density, resample_uniform,
    spline_motion_correct, IntensitySeries, MbllParams, SplineConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Leading seconds whose mean intensity is the optical density reference.
    pub baseline_s: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub spline: SplineConfig,
    pub mbll: MbllParams,
    /// Common rate both modalities are resampled to.
    pub target_hz: f64,
    /// Motor feature count after channel-group pooling; `None` matches the
    /// neural channel count of the trial.
    pub motor_channels: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            baseline_s: 5.0,
            low_hz: 0.01,
            high_hz: 0.5,
            spline: SplineConfig::default(),
            mbll: MbllParams::default(),
            target_hz: 1.0,
            motor_channels: None,
        }
    }
}

/// Splits `"<channel>_<wavelength>"`.
fn parse_column(name: &str) -> Result<(&str, f64)> {
    let (ch, nm) = name
        .rsplit_once('_')
        .ok_or_else(|| Error::arg(format!("column '{name}' is not <channel>_<wavelength>")))?;
    let nm: f64 = nm
        .parse()
        .map_err(|_| Error::arg(format!("column '{name}' has a non-numeric wavelength")))?;
    Ok((ch, nm))
}

/// Raw intensities (`T × 2C`, columns paired by channel in the configured
/// wavelength order) to normalized ΔHbO at the target rate (`T' × C`).
pub fn preprocess_neural<F: Scalar>(raw: &SpatioTemporalMatrix<F>, cfg: &PipelineConfig) -> Result<SpatioTemporalMatrix<F>> {
    if !raw.channels().is_multiple_of(2) {
        return Err(Error::arg(format!(
            "raw neural data needs two wavelength columns per channel, got {}",
            raw.channels()
        )));
    }
    cfg.mbll.validate()?;
    let n_ch = raw.channels() / 2;
    let fs = raw.sample_rate_hz;
    let mut hbo = Array2::zeros((raw.len(), n_ch));
    let mut names = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        let (id_a, nm_a) = parse_column(&raw.channel_names[2 * c])?;
        let (id_b, nm_b) = parse_column(&raw.channel_names[2 * c + 1])?;
        if id_a != id_b {
            return Err(Error::arg(format!("columns {} and {} are not one channel", 2 * c, 2 * c + 1)));
        }
        if (nm_a - cfg.mbll.wavelengths_nm[0]).abs() > 0.5 || (nm_b - cfg.mbll.wavelengths_nm[1]).abs() > 0.5 {
            return Err(Error::arg(format!(
                "channel {id_a} wavelengths {nm_a}/{nm_b} do not match the optical constants"
            )));
        }
        let samples = raw.data.slice(ndarray::s![.., 2 * c..2 * c + 2]).to_owned();
        let intensity = IntensitySeries::new(samples, fs, vec![nm_a, nm_b], id_a)?;
        let od = optical_density(&intensity, leading_window(fs, cfg.baseline_s, raw.len()))?;
        let od = bandpass_filter(&od, cfg.low_hz, cfg.high_hz)?;
        let od = spline_motion_correct(&od, &cfg.spline)?;
        let hemo = mbll_convert(&od, &cfg.mbll, id_a)?;
        for (dst, v) in hbo.column_mut(c).iter_mut().zip(hemo.delta_hbo) {
            *dst = v;
        }
        names.push(id_a.to_string());
    }
    let data = minmax_normalize(&resample_uniform(&hbo, fs, cfg.target_hz)?);
    SpatioTemporalMatrix::new(data, cfg.target_hz, names, Modality::Neural)
}

/// Per-frame motor features (`T × D`) pooled to `d_prime` channel groups,
/// resampled to the target rate and normalized.
pub fn preprocess_motor<F: Scalar>(raw: &SpatioTemporalMatrix<F>, d_prime: usize, cfg: &PipelineConfig) -> Result<SpatioTemporalMatrix<F>> {
    let pooled = channel_group_gap(&raw.data, d_prime)?;
    let data = minmax_normalize(&resample_uniform(&pooled, raw.sample_rate_hz, cfg.target_hz)?);
    SpatioTemporalMatrix::with_prefix(data, cfg.target_hz, "m", Modality::Motor)
}

/// Both streams of a raw trial through their pipelines; the motor stream is
/// pooled to the configured width or, by default, the neural channel count.
pub fn preprocess_trial<F: Scalar>(raw: &TrialRecord<F>, cfg: &PipelineConfig) -> Result<TrialRecord<F>> {
    let neural = preprocess_neural(&raw.neural, cfg)?;
    let d_prime = cfg.motor_channels.unwrap_or(neural.channels());
    let motor = preprocess_motor(&raw.motor, d_prime, cfg)?;
    Ok(TrialRecord {
        trial_id: raw.trial_id.clone(),
        subject_id: raw.subject_id.clone(),
        task: raw.task,
        label: raw.label,
        score: raw.score,
        neural,
        motor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_names() {
        assert_eq!(parse_column("S1D1_760").unwrap(), ("S1D1", 760.0));
        assert_eq!(parse_column("a_b_850").unwrap(), ("a_b", 850.0));
        assert!(parse_column("S1D1").is_err());
        assert!(parse_column("S1D1_red").is_err());
    }

    #[test]
    fn motor_shape_and_range() {
        let data = Array2::from_shape_fn((301, 12), |(t, j)| ((t as f64) * 0.01 * (j + 1) as f64).sin());
        let raw = SpatioTemporalMatrix::with_prefix(data, 30.0, "f", Modality::Motor).unwrap();
        let out = preprocess_motor(&raw, 6, &PipelineConfig::default()).unwrap();
        assert_eq!(out.data.dim(), (11, 6));
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.sample_rate_hz, 1.0);
    }
}
