//! Model inputs: time-by-channel matrices, channel reduction and modality
//! fusion.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Neural,
    Motor,
    Fused,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Neural, Modality::Motor, Modality::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Neural => "neural",
            Modality::Motor => "motor",
            Modality::Fused => "fused",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(Modality::Neural),
            "motor" => Ok(Modality::Motor),
            "fused" => Ok(Modality::Fused),
            other => Err(Error::arg(format!("unknown modality '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PatternCutting,
    Suturing,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::PatternCutting => "pattern_cutting",
            Task::Suturing => "suturing",
        }
    }

    /// Class names indexed by label; index 0 is the less skilled class.
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            Task::PatternCutting => ["Fail", "Pass"],
            Task::Suturing => ["Resident", "Surgeon"],
        }
    }

    pub fn label_index(self, name: &str) -> Result<usize> {
        self.class_names()
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::arg(format!("label '{name}' is not valid for task {}", self.as_str())))
    }

    /// fNIRS channel count and sample rate of the recordings this task
    /// mirrors.
    pub fn neural_defaults(self) -> (usize, f64) {
        match self {
            Task::PatternCutting => (6, 7.8125),
            Task::Suturing => (8, 5.0863),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pattern_cutting" => Ok(Task::PatternCutting),
            "suturing" => Ok(Task::Suturing),
            other => Err(Error::arg(format!("unknown task '{other}'"))),
        }
    }
}

/// A `T × C` real matrix sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalMatrix<F> {
    pub data: Array2<F>,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub modality: Modality,
}

impl<F: Scalar> SpatioTemporalMatrix<F> {
    pub fn new(data: Array2<F>, sample_rate_hz: f64, channel_names: Vec<String>, modality: Modality) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::arg(format!(
                "matrix must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if channel_names.len() != data.ncols() {
            return Err(Error::arg(format!(
                "{} channel names for {} columns",
                channel_names.len(),
                data.ncols()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::arg("sample rate must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix contains non-finite values".into()));
        }
        Ok(Self {
            data,
            sample_rate_hz,
            channel_names,
            modality,
        })
    }

    /// Builds a matrix with generated channel names `prefix0, prefix1, …`.
    pub fn with_prefix(data: Array2<F>, sample_rate_hz: f64, prefix: &str, modality: Modality) -> Result<Self> {
        let names = (0..data.ncols()).map(|c| format!("{prefix}{c}")).collect();
        Self::new(data, sample_rate_hz, names, modality)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

/// One task execution with both modalities and its supervision targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord<F> {
    pub trial_id: String,
    pub subject_id: String,
    pub task: Task,
    /// Index into [`Task::class_names`].
    pub label: usize,
    pub score: f64,
    pub neural: SpatioTemporalMatrix<F>,
    pub motor: SpatioTemporalMatrix<F>,
}

impl<F: Scalar> TrialRecord<F> {
    /// The model input for `modality`, fusing on demand.
    pub fn input(&self, modality: Modality) -> Result<SpatioTemporalMatrix<F>> {
        match modality {
            Modality::Neural => Ok(self.neural.clone()),
            Modality::Motor => Ok(self.motor.clone()),
            Modality::Fused => align_and_fuse(&self.neural, &self.motor),
        }
    }
}

/// Contiguous channel groups for reducing `d` channels to `d_prime`; the
/// first `d % d_prime` groups get one extra channel.
pub fn channel_groups(d: usize, d_prime: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if d_prime < 1 || d_prime > d {
        return Err(Error::arg(format!(
            "cannot reduce {d} channels to {d_prime}"
        )));
    }
    let base = d / d_prime;
    let extra = d % d_prime;
    let mut start = 0;
    Ok((0..d_prime)
        .map(|g| {
            let len = base + usize::from(g < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// 1D average pooling over the feature axis: `T × D → T × D′`.
pub fn channel_group_gap<F: Scalar>(x: &Array2<F>, d_prime: usize) -> Result<Array2<F>> {
    let groups = channel_groups(x.ncols(), d_prime)?;
    let mut out = Array2::zeros((x.nrows(), d_prime));
    for (g, range) in groups.into_iter().enumerate() {
        let n = F::from_count(range.len());
        let block = x.slice(s![.., range]);
        for (t, row) in block.axis_iter(Axis(0)).enumerate() {
            out[[t, g]] = row.sum() / n;
        }
    }
    Ok(out)
}

/// Concatenates neural then motor channels after truncating both to the
/// shorter length.
pub fn align_and_fuse<F: Scalar>(
    neural: &SpatioTemporalMatrix<F>,
    motor: &SpatioTemporalMatrix<F>,
) -> Result<SpatioTemporalMatrix<F>> {
    let rel = (neural.sample_rate_hz - motor.sample_rate_hz).abs() / neural.sample_rate_hz;
    if rel > 1e-9 {
        return Err(Error::arg(format!(
            "cannot fuse modalities sampled at {} Hz and {} Hz",
            neural.sample_rate_hz, motor.sample_rate_hz
        )));
    }
    let t = neural.len().min(motor.len());
    let data = concatenate(
        Axis(1),
        &[neural.data.slice(s![..t, ..]), motor.data.slice(s![..t, ..])],
    )
    .expect("row counts match after truncation");
    let channel_names = neural
        .channel_names
        .iter()
        .chain(&motor.channel_names)
        .cloned()
        .collect();
    Ok(SpatioTemporalMatrix {
        data,
        sample_rate_hz: neural.sample_rate_hz,
        channel_names,
        modality: Modality::Fused,
    })
}
