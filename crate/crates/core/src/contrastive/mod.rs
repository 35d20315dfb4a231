//! Self-supervised frame features: a small strided conv backbone trained
//! with paired augmentations and the NT-Xent objective.

mod augment;
mod conv;
mod frames_io;
mod loss;

use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Adam, EarlyStopping, EpochOutcome};
use crate::scalar::Scalar;
use crate::seed::{self, Rng};

pub use augment::{augment_pair, augment_view, AugmentConfig};
pub use conv::Conv2d;
pub use frames_io::{read_frame_blob, read_frame_dir, write_frame_blob, BLOB_MAGIC};
pub use loss::nt_xent_loss;

use conv::Conv2dCache;

/// An RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<F> {
    pub pixels: Array3<F>,
}

impl<F: Scalar> Frame<F> {
    pub const MIN_SIDE: usize = 8;

    pub fn new(pixels: Array3<F>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::arg(format!("frames need 3 channels, got {c}")));
        }
        if h < Self::MIN_SIDE || w < Self::MIN_SIDE {
            return Err(Error::arg(format!("frame {h}x{w} is below the 8x8 minimum")));
        }
        if pixels.iter().any(|&v| !(v >= F::zero() && v <= F::one())) {
            return Err(Error::Domain("frame pixels must lie in [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub feature_dim: usize,
    pub projection_dim: usize,
    /// Widths of the strided conv layers before the final `feature_dim` layer.
    pub hidden_channels: Vec<usize>,
    /// Side length frames are cropped or resized to.
    pub image_size: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub augment: AugmentConfig,
    pub rng_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            projection_dim: 128,
            hidden_channels: vec![8, 16],
            image_size: 32,
            temperature: 0.5,
            batch_size: 64,
            epochs: 200,
            patience: 10,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            augment: AugmentConfig::default(),
            rng_seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.projection_dim < 2 {
            return Err(Error::arg("feature_dim must be >= 1 and projection_dim >= 2"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::arg("temperature must be positive"));
        }
        if self.batch_size < 2 || self.patience == 0 || self.image_size < Frame::<f64>::MIN_SIDE {
            return Err(Error::arg("batch_size >= 2, patience >= 1 and image_size >= 8 are required"));
        }
        if self.hidden_channels.contains(&0) {
            return Err(Error::arg("hidden channel widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::arg("validation_fraction must lie in [0, 1)"));
        }
        self.augment.validate()
    }

    fn layers(&self) -> Vec<Conv2d> {
        let mut widths = vec![3];
        widths.extend(&self.hidden_channels);
        widths.push(self.feature_dim);
        widths.windows(2).map(|p| Conv2d::new(p[0], p[1])).collect()
    }
}

/// The feature extractor `frame → ℝ^D`: strided conv + ReLU layers followed
/// by spatial average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Backbone<F> {
    pub config: BackboneConfig,
    pub parameters: Vec<F>,
    /// Validation loss before the first update, then after each epoch.
    pub history: Vec<f64>,
    pub best_epoch: usize,
}

struct BackboneCache<F> {
    convs: Vec<(Conv2dCache<F>, Array3<F>)>,
    spatial: usize,
}

fn backbone_forward<F: Scalar>(layers: &[Conv2d], params: &[F], x: &Array3<F>) -> (Array1<F>, BackboneCache<F>) {
    let mut convs = Vec::with_capacity(layers.len());
    let mut act = x.clone();
    let mut offset = 0;
    for layer in layers {
        let p = &params[offset..offset + layer.param_len()];
        offset += layer.param_len();
        let (pre, cache) = layer.forward(p, &act);
        act = pre.mapv(|v| v.max(F::zero()));
        convs.push((cache, pre));
    }
    let (h, w, d) = act.dim();
    let flat = act.into_shape_with_order((h * w, d)).expect("backbone output");
    let features = flat.mean_axis(Axis(0)).expect("non-empty feature map");
    (features, BackboneCache { convs, spatial: h * w })
}

fn backbone_backward<F: Scalar>(
    layers: &[Conv2d],
    params: &[F],
    cache: &BackboneCache<F>,
    g_features: ArrayView1<F>,
    grad: &mut [F],
) {
    let offsets: Vec<usize> = layers
        .iter()
        .scan(0, |acc, l| {
            let start = *acc;
            *acc += l.param_len();
            Some(start)
        })
        .collect();
    let last = cache.convs.last().expect("at least one layer");
    let scale = F::one() / F::from_count(cache.spatial);
    let mut g = Array3::from_shape_fn(last.1.dim(), |(_, _, c)| g_features[c] * scale);
    for (i, layer) in layers.iter().enumerate().rev() {
        let (conv_cache, pre) = &cache.convs[i];
        g.zip_mut_with(pre, |gv, &v| {
            if v <= F::zero() {
                *gv = F::zero();
            }
        });
        let (o, n) = (offsets[i], layer.param_len());
        match layer.backward(&params[o..o + n], conv_cache, &g, &mut grad[o..o + n], i > 0) {
            Some(gx) => g = gx,
            None => break,
        }
    }
}

/// Resizes the whole frame to the model input size and standardizes it.
fn prepare<F: Scalar>(frame: &Frame<F>, size: usize) -> Array3<F> {
    let mut img = augment::resize_window(&frame.pixels, (0, 0, frame.height(), frame.width()), size);
    augment::standardize_channels(&mut img);
    img
}

impl<F: Scalar> Backbone<F> {
    pub fn initialized(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let (params, _) = init_params(config, &mut seed::rng(config.rng_seed));
        Ok(Self {
            config: config.clone(),
            parameters: params,
            history: Vec::new(),
            best_epoch: 0,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn embed(&self, frame: &Frame<F>) -> Array1<F> {
        let input = prepare(frame, self.config.image_size);
        backbone_forward(&self.config.layers(), &self.parameters, &input).0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.config.validate()?;
        let expected: usize = model.config.layers().iter().map(Conv2d::param_len).sum();
        if model.parameters.len() != expected {
            return Err(Error::format(path, "parameter count does not match the configuration"));
        }
        Ok(model)
    }
}

/// Backbone parameters followed by the projection head `K × D` weights and
/// `K` biases. The head bias starts random: a crop of flat background
/// standardizes to zeros and yields zero features, and its embedding must
/// still have a direction.
fn init_params<F: Scalar>(config: &BackboneConfig, rng: &mut Rng) -> (Vec<F>, Vec<F>) {
    let layers = config.layers();
    let total: usize = layers.iter().map(Conv2d::param_len).sum();
    let mut backbone = vec![F::zero(); total];
    let mut offset = 0;
    for layer in &layers {
        layer.init(&mut backbone[offset..offset + layer.param_len()], rng);
        offset += layer.param_len();
    }
    let (k, d) = (config.projection_dim, config.feature_dim);
    let limit = (3.0 / d as f64).sqrt();
    let mut head = vec![F::zero(); k * d + k];
    for v in &mut head {
        *v = F::lit(rand::Rng::random_range(rng, -limit..=limit));
    }
    (backbone, head)
}

/// Row `j` is the backbone embedding of frame `j`; no augmentation.
pub fn extract_features<F: Scalar>(backbone: &Backbone<F>, frames: &[Frame<F>]) -> Array2<F> {
    let mut out = Array2::zeros((frames.len(), backbone.feature_dim()));
    for (mut row, frame) in out.axis_iter_mut(Axis(0)).zip(frames) {
        row.assign(&backbone.embed(frame));
    }
    out
}

struct Trainer<'a, F> {
    config: &'a BackboneConfig,
    layers: Vec<Conv2d>,
    n_backbone: usize,
    temperature: F,
}

impl<F: Scalar> Trainer<'_, F> {
    /// NT-Xent loss of one batch of frames and, if `grad` is given, its
    /// gradient accumulated over backbone and projection parameters.
    fn batch(&self, params: &[F], frames: &[&Frame<F>], rng: &mut Rng, grad: Option<&mut [F]>) -> Result<F> {
        let (k, d) = (self.config.projection_dim, self.config.feature_dim);
        let (bb, head) = params.split_at(self.n_backbone);
        let w = ndarray::ArrayView2::from_shape((k, d), &head[..k * d]).expect("projection weights");
        let b = ArrayView1::from(&head[k * d..]);

        let mut feats = Vec::with_capacity(2 * frames.len());
        let mut embeddings = Array2::zeros((2 * frames.len(), k));
        for (i, frame) in frames.iter().enumerate() {
            let (v1, v2) = augment_pair(frame, self.config.image_size, &self.config.augment, rng)?;
            for (j, view) in [v1, v2].iter().enumerate() {
                let (f, cache) = backbone_forward(&self.layers, bb, view);
                embeddings.row_mut(2 * i + j).assign(&(w.dot(&f) + b));
                feats.push((f, cache));
            }
        }
        let (loss, g_emb) = nt_xent_loss(&embeddings, self.temperature)?;
        if let Some(grad) = grad {
            let (g_bb, g_head) = grad.split_at_mut(self.n_backbone);
            let (g_w, g_b) = g_head.split_at_mut(k * d);
            let mut g_w = ndarray::ArrayViewMut2::from_shape((k, d), g_w).expect("projection grad");
            for ((f, cache), ge) in feats.iter().zip(g_emb.axis_iter(Axis(0))) {
                g_w += &ge.view().insert_axis(Axis(1)).dot(&f.view().insert_axis(Axis(0)));
                for (gb, &g) in g_b.iter_mut().zip(ge.iter()) {
                    *gb += g;
                }
                let g_feat = w.t().dot(&ge);
                backbone_backward(&self.layers, bb, cache, g_feat.view(), g_bb);
            }
        }
        Ok(loss)
    }

    /// Frames split into batches of the configured size; a trailing single
    /// frame joins the previous batch since a batch needs two frames.
    fn batches<'f>(&self, frames: &[&'f Frame<F>]) -> Vec<Vec<&'f Frame<F>>> {
        let mut out: Vec<Vec<&Frame<F>>> = frames.chunks(self.config.batch_size).map(|c| c.to_vec()).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
            let tail = out.pop().expect("non-empty");
            out.last_mut().expect("non-empty").extend(tail);
        }
        out
    }

    /// Mean loss over fixed-seed views of the validation frames.
    fn validation_loss(&self, params: &[F], frames: &[&Frame<F>]) -> Result<f64> {
        let mut rng = seed::rng(seed::derive(self.config.rng_seed, 0x7A1D));
        let mut total = 0.0;
        let mut count = 0;
        for batch in self.batches(frames) {
            total += self.batch(params, &batch, &mut rng, None)?.as_f64() * batch.len() as f64;
            count += batch.len();
        }
        Ok(total / count as f64)
    }
}

/// Trains backbone and projection head on held-in frames, stopping on the
/// held-out NT-Xent loss; returns the best backbone without its head.
pub fn train_contrastive<F: Scalar>(frames: &[Frame<F>], config: &BackboneConfig) -> Result<Backbone<F>> {
    config.validate()?;
    if frames.len() < config.batch_size.max(4) {
        return Err(Error::arg(format!(
            "need at least {} frames, got {}",
            config.batch_size.max(4),
            frames.len()
        )));
    }
    for f in frames {
        if f.height() < config.image_size || f.width() < config.image_size {
            return Err(Error::arg(format!(
                "frame {}x{} is smaller than image_size {}",
                f.height(),
                f.width(),
                config.image_size
            )));
        }
    }

    let mut rng = seed::rng(config.rng_seed);
    let mut order: Vec<&Frame<F>> = frames.iter().collect();
    order.shuffle(&mut rng);
    let n_val = ((frames.len() as f64 * config.validation_fraction).round() as usize).clamp(2, frames.len() - 2);
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();

    let (backbone, head) = init_params::<F>(config, &mut rng);
    let trainer = Trainer {
        config,
        layers: config.layers(),
        n_backbone: backbone.len(),
        temperature: F::lit(config.temperature),
    };
    let mut params = backbone;
    params.extend(head);
    let mut best = params[..trainer.n_backbone].to_vec();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut stopper = EarlyStopping::new(config.patience, 0.0);
    let mut history = vec![trainer.validation_loss(&params, val)?];
    let mut grad = vec![F::zero(); params.len()];

    for epoch in 0..config.epochs {
        train.shuffle(&mut rng);
        for batch in trainer.batches(&train) {
            grad.fill(F::zero());
            trainer.batch(&params, &batch, &mut rng, Some(&mut grad))?;
            adam.update(&mut params, &grad);
        }
        let loss = trainer.validation_loss(&params, val)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("contrastive loss diverged at epoch {epoch}")));
        }
        history.push(loss);
        match stopper.observe(epoch, loss) {
            EpochOutcome::Improved => best.copy_from_slice(&params[..trainer.n_backbone]),
            EpochOutcome::NoImprovement => {}
            EpochOutcome::Stop => break,
        }
    }

    Ok(Backbone {
        config: config.clone(),
        parameters: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(0),
    })
}
