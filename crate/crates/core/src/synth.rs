//! Synthetic trials with known skill structure.
//!
//! Each subject carries two latent traits drawn once: one expressed in the
//! neural stream, one in the motor stream. Trial-level jitter perturbs both,
//! and the trial's skill is their normalized sum, so each modality alone sees
//! half the skill variance and the fused input sees all of it.
//!
//! Neural channels encode the neural trait as the amplitude of a block-design
//! event train convolved with a gamma response, against a fixed noise floor.
//! Motor features encode the motor trait as the amplitude of fast jitter
//! riding on smooth trajectories. Both effects are log-linear in
//! `separation × trait`, so after per-channel min-max scaling they appear as
//! signal smoothness.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::Frame;
use crate::error::{Error, Result};
use crate::featurestream::{Modality, SpatioTemporalMatrix, Task, TrialRecord};
use crate::seed::{self, Rng};
use crate::signalproc::MbllParams;

/// Block-design period of the evoked event train, seconds.
const EVENT_PERIOD_S: f64 = 12.0;
const GAMMA_SHAPE: f64 = 6.0;
const GAMMA_SCALE_S: f64 = 0.9;
/// Peak ΔHbO of a sustained block at trait 0, µM.
const EVOKED_UM: f64 = 1.0;
const RESPIRATION_UM: f64 = 0.2;
/// Fast motor jitter relative to trajectory amplitude at trait 0.
const MOTOR_JITTER: f64 = 0.25;
/// Log-amplitude change per unit of `separation × trait`.
const TRAIT_GAIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub task: Task,
    /// Strength of the skill signal in both modalities; 0 makes every
    /// channel independent of skill.
    pub separation: f64,
    /// `None` uses the task's recording layout.
    pub channels_neural: Option<usize>,
    pub channels_motor: usize,
    /// Trial duration drawn uniformly from this range, seconds.
    pub duration_s: [f64; 2],
    pub fs_neural: Option<f64>,
    pub fs_motor: f64,
    /// Spike artifacts per minute per channel.
    pub artifact_rate: f64,
    /// Fraction of trials below the skill threshold, in expectation.
    pub fail_fraction: f64,
    /// Std of trial-level perturbation relative to the subject trait.
    pub trial_jitter: f64,
    /// Score noise in skill units.
    pub score_noise: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            trials_per_subject: 10,
            task: Task::PatternCutting,
            separation: 3.0,
            channels_neural: None,
            channels_motor: 12,
            duration_s: [40.0, 70.0],
            fs_neural: None,
            fs_motor: 30.0,
            artifact_rate: 0.5,
            fail_fraction: 0.5,
            trial_jitter: 0.35,
            score_noise: 0.1,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::arg("need at least 2 subjects"));
        }
        if self.trials_per_subject < 1 {
            return Err(Error::arg("need at least 1 trial per subject"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::arg("separation must be finite and non-negative"));
        }
        if self.neural_channels() < 1 || self.channels_motor < 1 {
            return Err(Error::arg("channel counts must be positive"));
        }
        let [lo, hi] = self.duration_s;
        if !(lo >= 20.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::arg("duration range must satisfy 20 <= min <= max"));
        }
        if !(self.neural_rate() > 1.0 && self.fs_motor > 1.0) {
            return Err(Error::arg("sample rates must exceed 1 Hz"));
        }
        if !(self.artifact_rate >= 0.0 && self.artifact_rate.is_finite()) {
            return Err(Error::arg("artifact rate must be finite and non-negative"));
        }
        if !(self.fail_fraction > 0.0 && self.fail_fraction < 1.0) {
            return Err(Error::arg("fail fraction must lie in (0, 1)"));
        }
        if !(self.trial_jitter >= 0.0 && self.score_noise >= 0.0) {
            return Err(Error::arg("noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn neural_channels(&self) -> usize {
        self.channels_neural.unwrap_or(self.task.neural_defaults().0)
    }

    pub fn neural_rate(&self) -> f64 {
        self.fs_neural.unwrap_or(self.task.neural_defaults().1)
    }

    /// Skill below which a trial gets label 0.
    pub fn skill_threshold(&self) -> f64 {
        statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::Normal::standard(),
            self.fail_fraction,
        )
    }
}

/// Per-subject traits, each marginally standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectLatent {
    pub neural: f64,
    pub motor: f64,
}

impl SubjectLatent {
    pub fn skill(&self) -> f64 {
        (self.neural + self.motor) / std::f64::consts::SQRT_2
    }
}

/// A generated trial in raw form (intensities and per-frame motor features)
/// with the noise-free skill that defined its label.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrial {
    pub record: TrialRecord<f64>,
    pub skill: f64,
    /// Trial-level traits after jitter.
    pub traits: SubjectLatent,
}

fn score_affine(task: Task) -> (f64, f64) {
    match task {
        Task::PatternCutting => (180.0, 40.0),
        Task::Suturing => (20.0, 5.0),
    }
}

fn gauss(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-sum gamma kernel sampled at `fs`.
fn gamma_kernel(fs: f64) -> Vec<f64> {
    let support = GAMMA_SHAPE * GAMMA_SCALE_S * 4.0;
    let n = (support * fs).ceil() as usize + 1;
    let k: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            t.powf(GAMMA_SHAPE - 1.0) * (-t / GAMMA_SCALE_S).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Causal convolution truncated to the input length.
fn convolve(x: &[f64], k: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| k.iter().take(t + 1).enumerate().map(|(j, &w)| w * x[t - j]).sum())
        .collect()
}

/// Stationary AR(1) with unit variance and correlation time `tau_s`.
fn ar1(n: usize, fs: f64, tau_s: f64, rng: &mut Rng) -> Vec<f64> {
    let phi = (-1.0 / (tau_s * fs)).exp();
    let innov = (1.0 - phi * phi).sqrt();
    let mut v = gauss(rng);
    (0..n)
        .map(|_| {
            let out = v;
            v = phi * v + innov * gauss(rng);
            out
        })
        .collect()
}

/// 1/f-like noise as a sum of AR(1) processes at log-spaced time scales.
fn pink_noise(n: usize, fs: f64, std: f64, rng: &mut Rng) -> Vec<f64> {
    let taus = [0.5, 2.0, 8.0, 32.0];
    let per = std / (taus.len() as f64).sqrt();
    let parts: Vec<Vec<f64>> = taus.iter().map(|&tau| ar1(n, fs, tau, rng)).collect();
    (0..n).map(|t| per * parts.iter().map(|p| p[t]).sum::<f64>()).collect()
}

fn neural_stream(cfg: &SynthConfig, trait_value: f64, duration: f64, rng: &mut Rng) -> Result<SpatioTemporalMatrix<f64>> {
    let fs = cfg.neural_rate();
    let n = (duration * fs).round() as usize + 1;
    let mbll = MbllParams::default();
    let strength = (TRAIT_GAIN * cfg.separation * trait_value).exp();
    let kernel = gamma_kernel(fs);
    let phase = rng.random_range(0.0..EVENT_PERIOD_S);
    let channels = cfg.neural_channels();
    let spike_dist = Poisson::new(cfg.artifact_rate * duration / 60.0).ok();

    let mut data = Array2::zeros((n, 2 * channels));
    let mut names = Vec::with_capacity(2 * channels);
    for ch in 0..channels {
        let offset = phase + rng.random_range(-0.5..0.5);
        let events: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs + offset;
                f64::from(u8::from((t / EVENT_PERIOD_S).fract() < 0.5))
            })
            .collect();
        let evoked = convolve(&events, &kernel);
        let gain = EVOKED_UM * strength * rng.random_range(0.8..1.2);
        let noise_o = pink_noise(n, fs, 0.05, rng);
        // Respiration-band oscillation keeps the artifact detector's median
        // moving std above the slope of evoked responses.
        let resp_f = rng.random_range(0.2..0.3);
        let resp_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let noise_r = pink_noise(n, fs, 0.05, rng);
        let drift_amp = rng.random_range(0.005..0.02);
        let drift_period = rng.random_range(150.0..400.0);
        let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);

        let mut od = vec![[0.0; 2]; n];
        for t in 0..n {
            let resp = RESPIRATION_UM * (std::f64::consts::TAU * resp_f * t as f64 / fs + resp_phase).sin();
            let hbo = gain * evoked[t] + noise_o[t] + resp;
            let hbr = -0.3 * hbo + noise_r[t];
            let drift = drift_amp * (std::f64::consts::TAU * t as f64 / fs / drift_period + drift_phase).sin();
            let [a, b] = mbll.forward(hbo, hbr);
            od[t] = [a + drift, b + drift];
        }
        if let Some(dist) = spike_dist {
            let count = dist.sample(rng) as usize;
            for _ in 0..count {
                let at = rng.random_range(0..n);
                let len = rng.random_range(1..=3usize);
                let mag = rng.random_range(0.01..0.04) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for row in od.iter_mut().skip(at).take(len) {
                    row[0] += mag;
                    row[1] += mag;
                }
            }
        }
        for w in 0..2 {
            let i0 = rng.random_range(0.5..2.0);
            for t in 0..n {
                data[[t, 2 * ch + w]] = i0 * 10f64.powf(-od[t][w]);
            }
            names.push(format!("S{}D{}_{}", ch + 1, ch + 1, mbll.wavelengths_nm[w]));
        }
    }
    SpatioTemporalMatrix::new(data, fs, names, Modality::Neural)
}

fn motor_stream(cfg: &SynthConfig, trait_value: f64, duration: f64, rng: &mut Rng) -> Result<SpatioTemporalMatrix<f64>> {
    let fs = cfg.fs_motor;
    let n = (duration * fs).round() as usize + 1;
    let jitter = MOTOR_JITTER * (-TRAIT_GAIN * cfg.separation * trait_value).exp();
    let mut data = Array2::zeros((n, cfg.channels_motor));
    for j in 0..cfg.channels_motor {
        let comps: Vec<(f64, f64, f64)> = (1..=3)
            .map(|h| {
                (
                    rng.random_range(0.5..1.0) / h as f64,
                    rng.random_range(0.02..0.1),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let fast = ar1(n, fs, 0.1, rng);
        for t in 0..n {
            let time = t as f64 / fs;
            let smooth: f64 = comps
                .iter()
                .map(|&(a, f, p)| a * (std::f64::consts::TAU * f * time + p).sin())
                .sum();
            data[[t, j]] = smooth + jitter * fast[t];
        }
    }
    SpatioTemporalMatrix::with_prefix(data, fs, "f", Modality::Motor)
}

/// One raw trial for a subject with traits `latent`.
pub fn generate_trial(subject_id: &str, trial_id: &str, latent: SubjectLatent, cfg: &SynthConfig, seed: u64) -> Result<SynthTrial> {
    cfg.validate()?;
    let mut rng = seed::rng(seed);
    let j = cfg.trial_jitter;
    let norm = (1.0 + j * j).sqrt();
    let neural_trait = (latent.neural + j * gauss(&mut rng)) / norm;
    let motor_trait = (latent.motor + j * gauss(&mut rng)) / norm;
    let traits = SubjectLatent {
        neural: neural_trait,
        motor: motor_trait,
    };
    let skill = traits.skill();
    let label = usize::from(skill >= cfg.skill_threshold());
    let (center, scale) = score_affine(cfg.task);
    let score = center + scale * (skill + cfg.score_noise * gauss(&mut rng));
    let duration = rng.random_range(cfg.duration_s[0]..=cfg.duration_s[1]);
    let neural = neural_stream(cfg, neural_trait, duration, &mut rng)?;
    let motor = motor_stream(cfg, motor_trait, duration, &mut rng)?;
    Ok(SynthTrial {
        record: TrialRecord {
            trial_id: trial_id.to_string(),
            subject_id: subject_id.to_string(),
            task: cfg.task,
            label,
            score,
            neural,
            motor,
        },
        skill,
        traits,
    })
}

/// Subject traits, drawn once per subject from the master seed.
pub fn subject_latents(cfg: &SynthConfig) -> Vec<SubjectLatent> {
    let mut rng = seed::rng(seed::derive(cfg.rng_seed, 0x5B7E));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..cfg.n_subjects)
        .map(|_| SubjectLatent {
            neural: normal.sample(&mut rng),
            motor: normal.sample(&mut rng),
        })
        .collect()
}

/// All trials, subject-major. Trials are generated in parallel from
/// per-trial derived seeds, so output is independent of thread count.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<SynthTrial>> {
    cfg.validate()?;
    let latents = subject_latents(cfg);
    let jobs: Vec<(usize, usize)> = (0..cfg.n_subjects)
        .flat_map(|s| (0..cfg.trials_per_subject).map(move |t| (s, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(s, t)| {
            let seed = seed::derive(seed::derive(cfg.rng_seed, s as u64 + 1), t as u64);
            generate_trial(
                &format!("sub{:02}", s + 1),
                &format!("sub{:02}_t{:02}", s + 1, t + 1),
                latents[s],
                cfg,
                seed,
            )
        })
        .collect()
}

/// Writes raw trials in the manifest layout plus a `skill.csv` ground-truth
/// table. Returns the manifest path.
pub fn write_dataset(dir: &Path, trials: &[SynthTrial]) -> Result<PathBuf> {
    let records: Vec<TrialRecord<f64>> = trials.iter().map(|t| t.record.clone()).collect();
    let manifest = crate::dataset::write_trials(dir, &records)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial_id", "subject_id", "skill"])?;
    for t in trials {
        w.write_record([t.record.trial_id.as_str(), t.record.subject_id.as_str(), &t.skill.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(&dir.join("skill.csv"), &bytes)?;
    Ok(manifest)
}

fn squash(v: f64) -> f64 {
    0.5 + 0.5 * v.tanh()
}

/// Renders per-frame motor features as `size × size` RGB frames: a disc whose
/// position, radius and color follow the first six features, on a dark
/// background. Every `stride`-th row of `motor` becomes one frame.
pub fn render_frames(motor: &Array2<f64>, size: usize, stride: usize) -> Result<Vec<Frame<f64>>> {
    if motor.ncols() < 6 {
        return Err(Error::arg(format!("frame rendering needs 6 motor features, got {}", motor.ncols())));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    motor
        .rows()
        .into_iter()
        .step_by(stride)
        .map(|f| {
            let cx = (0.2 + 0.6 * squash(f[0])) * size as f64;
            let cy = (0.2 + 0.6 * squash(f[1])) * size as f64;
            let r = (0.1 + 0.1 * squash(f[2])) * size as f64;
            let color = [squash(f[3]), squash(f[4]), squash(f[5])];
            let pixels = Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    color[c]
                } else {
                    0.15
                }
            });
            Frame::new(pixels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 2,
            trials_per_subject: 2,
            duration_s: [30.0, 35.0],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn gamma_kernel_peaks_near_mode() {
        let fs = 10.0;
        let k = gamma_kernel(fs);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let peak = k.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
        // mode = (shape - 1) * scale
        assert!((peak as f64 / fs - 4.5).abs() <= 0.1);
    }

    #[test]
    fn ar1_has_unit_variance() {
        let mut rng = seed::rng(3);
        let x = ar1(200_000, 30.0, 0.1, &mut rng);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(SynthConfig { n_subjects: 1, ..small() }.validate().is_err());
        assert!(SynthConfig { separation: -1.0, ..small() }.validate().is_err());
        assert!(SynthConfig { fail_fraction: 1.0, ..small() }.validate().is_err());
        assert!(serde_json::from_str::<SynthConfig>(r#"{"bogus": 1}"#).is_err());
        let cfg: SynthConfig = serde_json::from_str(r#"{"task": "suturing"}"#).unwrap();
        assert_eq!((cfg.neural_channels(), cfg.neural_rate()), (8, 5.0863));
    }

    #[test]
    fn threshold_follows_fail_fraction() {
        assert!(small().skill_threshold().abs() < 1e-12);
        let t = SynthConfig { fail_fraction: 0.1, ..small() }.skill_threshold();
        assert!((t + 1.2815515655446004).abs() < 1e-9);
    }

    #[test]
    fn frames_follow_features() {
        let motor = Array2::from_shape_fn((4, 6), |(t, _)| t as f64 - 2.0);
        let frames = render_frames(&motor, 16, 2).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].height(), 16);
        assert_ne!(frames[0], frames[1]);
    }
}
