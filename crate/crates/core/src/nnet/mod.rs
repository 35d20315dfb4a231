//! The skill classifier/regressor: 1D conv → residual block → SCse
//! attention → global average pooling → dense head, trained with hand-written
//! reverse-mode gradients.

mod gradcheck;
pub mod layers;
mod network;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestream::SpatioTemporalMatrix;
use crate::scalar::Scalar;

pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use network::{ForwardPass, ParamBlock, VbaNet};
pub use train::{train, Adam, EarlyStopping, EpochOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Classify { classes: usize },
    Regress,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Classify { classes } => classes,
            Head::Regress => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbaNetConfig {
    pub in_channels: usize,
    #[serde(default = "defaults::conv_filters")]
    pub conv_filters: usize,
    #[serde(default = "defaults::kernel")]
    pub kernel: usize,
    #[serde(default = "defaults::se_reduction")]
    pub se_reduction: usize,
    pub head: Head,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    /// Minimum decrease of the monitored loss that counts as improvement.
    #[serde(default)]
    pub min_delta: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

mod defaults {
    pub fn conv_filters() -> usize {
        64
    }
    pub fn kernel() -> usize {
        3
    }
    pub fn se_reduction() -> usize {
        8
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn max_epochs() -> usize {
        5000
    }
    pub fn patience() -> usize {
        10
    }
}

impl VbaNetConfig {
    pub fn new(in_channels: usize, head: Head) -> Self {
        Self {
            in_channels,
            conv_filters: defaults::conv_filters(),
            kernel: defaults::kernel(),
            se_reduction: defaults::se_reduction(),
            head,
            learning_rate: defaults::learning_rate(),
            max_epochs: defaults::max_epochs(),
            patience: defaults::patience(),
            min_delta: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::arg("in_channels must be positive"));
        }
        if self.se_reduction == 0 || self.conv_filters < self.se_reduction {
            return Err(Error::arg(format!(
                "conv_filters ({}) must be >= se_reduction ({}) > 0",
                self.conv_filters, self.se_reduction
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::arg(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.patience == 0 {
            return Err(Error::arg("patience must be at least 1"));
        }
        if let Head::Classify { classes } = self.head {
            if classes < 2 {
                return Err(Error::arg("classification needs at least 2 classes"));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Supervision target for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction<F> {
    Probabilities(Vec<F>),
    /// On the original score scale.
    Score(F),
}

impl<F: Scalar> Prediction<F> {
    /// Most probable class and its probability.
    pub fn argmax(&self) -> Option<(usize, F)> {
        match self {
            Prediction::Probabilities(p) => p
                .iter()
                .copied()
                .enumerate()
                .fold(None, |best, (i, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((i, v)),
                }),
            Prediction::Score(_) => None,
        }
    }
}

/// Linear map of regression targets onto `[0, 1]` from training-fold extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub min: f64,
    pub max: f64,
}

impl TargetScale {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (min <= max).then_some(Self { min, max })
    }

    fn range(&self) -> f64 {
        let r = self.max - self.min;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / self.range()
    }

    pub fn inverse(&self, v: f64) -> f64 {
        self.min + v * self.range()
    }
}

pub const CHECKPOINT_FORMAT: &str = "cogmotor-vbanet";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained network: flat parameters, the architecture that interprets
/// them, and the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TrainedModel<F> {
    pub format: String,
    pub version: u32,
    pub config: VbaNetConfig,
    pub layout: Vec<ParamBlock>,
    pub parameters: Vec<F>,
    /// Monitored (epoch-mean training) loss per epoch.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub target_scale: Option<TargetScale>,
}

impl<F: Scalar> TrainedModel<F> {
    /// Wraps freshly initialized (untrained) parameters.
    pub fn initialized(config: &VbaNetConfig) -> Result<Self> {
        let net = VbaNet::new(config)?;
        let mut rng = crate::seed::rng(config.rng_seed);
        let parameters = net.init(&mut rng);
        Ok(Self::from_parts(config.clone(), &net, parameters, Vec::new(), 0, None))
    }

    pub(crate) fn from_parts(
        config: VbaNetConfig,
        net: &VbaNet,
        parameters: Vec<F>,
        history: Vec<f64>,
        best_epoch: usize,
        target_scale: Option<TargetScale>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            layout: net.layout(),
            parameters,
            history,
            best_epoch,
            target_scale,
        }
    }

    pub fn network(&self) -> Result<VbaNet> {
        VbaNet::new(&self.config)
    }

    /// Raw network outputs (logits, or the `[0, 1]`-scaled score).
    pub fn forward_raw(&self, x: &SpatioTemporalMatrix<F>) -> Result<ForwardPass<F>> {
        self.network()?.forward(&self.parameters, &x.data)
    }

    pub fn predict(&self, x: &SpatioTemporalMatrix<F>) -> Result<Prediction<F>> {
        let pass = self.forward_raw(x)?;
        Ok(match self.config.head {
            Head::Classify { .. } => Prediction::Probabilities(layers::softmax(&pass.outputs)),
            Head::Regress => {
                let raw = pass.outputs[0];
                let score = match self.target_scale {
                    Some(s) => F::lit(s.inverse(raw.as_f64())),
                    None => raw,
                };
                Prediction::Score(score)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format != CHECKPOINT_FORMAT || model.version != CHECKPOINT_VERSION {
            return Err(Error::arg(format!(
                "unsupported checkpoint {} v{}",
                model.format, model.version
            )));
        }
        let net = model.network()?;
        if model.parameters.len() != net.param_len() || model.layout != net.layout() {
            return Err(Error::arg("checkpoint parameters do not match its architecture"));
        }
        if model.parameters.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("checkpoint contains non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
