// `!(x > 0.0)` is how validators reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assess;
pub mod contrastive;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod featurestream;
pub mod io;
pub mod nnet;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod signalproc;
pub mod synth;
pub mod trust;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases for the common case.
pub type Matrix = featurestream::SpatioTemporalMatrix<f64>;
pub type Trial = featurestream::TrialRecord<f64>;
pub type Model = nnet::TrainedModel<f64>;
pub type ContrastiveBackbone = contrastive::Backbone<f64>;
pub type ImageFrame = contrastive::Frame<f64>;
