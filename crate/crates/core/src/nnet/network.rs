use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv1d, Dense, GlobalAvgPool, Layer, Relu, Residual, ResidualCache, Scse, ScseCache};
use super::{Head, Target, VbaNetConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// The architecture; parameters live outside it in a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VbaNet {
    pub conv: Conv1d,
    pub residual: Residual,
    pub attention: Scse,
    pub head: Dense,
    head_kind: Head,
    offsets: [usize; 5],
}

/// Activations and caches from one forward pass.
pub struct ForwardPass<F> {
    /// Logits (classification) or the scaled score (regression).
    pub outputs: Vec<F>,
    /// Pre-pooling feature maps `A[t][k]` (attention output).
    pub features: Array2<F>,
    conv_in: Array2<F>,
    conv_out: Array2<F>,
    residual: ResidualCache<F>,
    attention: ScseCache<F>,
    pooled: Array2<F>,
}

impl VbaNet {
    pub fn new(config: &VbaNetConfig) -> Result<Self> {
        config.validate()?;
        let f = config.conv_filters;
        let conv = Conv1d {
            cin: config.in_channels,
            cout: f,
            kernel: config.kernel,
        };
        let residual = Residual::new(f, config.kernel);
        let attention = Scse {
            channels: f,
            hidden: f / config.se_reduction,
        };
        let head = Dense {
            nin: f,
            nout: config.head.outputs(),
        };
        let lens = [
            Layer::<f64>::param_len(&conv),
            Layer::<f64>::param_len(&residual),
            Layer::<f64>::param_len(&attention),
            Layer::<f64>::param_len(&head),
        ];
        let mut offsets = [0; 5];
        for i in 0..4 {
            offsets[i + 1] = offsets[i] + lens[i];
        }
        Ok(Self {
            conv,
            residual,
            attention,
            head,
            head_kind: config.head,
            offsets,
        })
    }

    pub fn param_len(&self) -> usize {
        self.offsets[4]
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        ["conv", "residual", "scse", "head"]
            .iter()
            .enumerate()
            .map(|(i, name)| ParamBlock {
                name: (*name).into(),
                offset: self.offsets[i],
                len: self.offsets[i + 1] - self.offsets[i],
            })
            .collect()
    }

    fn block<'a, T>(&self, params: &'a [T], i: usize) -> &'a [T] {
        &params[self.offsets[i]..self.offsets[i + 1]]
    }

    fn block_mut<'a, T>(&self, params: &'a mut [T], i: usize) -> &'a mut [T] {
        &mut params[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Range of the head block within the flat vector.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.offsets[3]..self.offsets[4]
    }

    pub fn init<F: Scalar>(&self, rng: &mut Rng) -> Vec<F> {
        let mut p = vec![F::zero(); self.param_len()];
        self.conv.init(self.block_mut(&mut p, 0), rng);
        Layer::<F>::init(&self.residual, self.block_mut(&mut p, 1), rng);
        Layer::<F>::init(&self.attention, self.block_mut(&mut p, 2), rng);
        Layer::<F>::init(&self.head, self.block_mut(&mut p, 3), rng);
        p
    }

    pub fn forward<F: Scalar>(&self, params: &[F], x: &Array2<F>) -> Result<ForwardPass<F>> {
        if params.len() != self.param_len() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        if x.ncols() != self.conv.cin {
            return Err(Error::arg(format!(
                "input has {} channels, model expects {}",
                x.ncols(),
                self.conv.cin
            )));
        }
        if x.nrows() < self.conv.kernel {
            return Err(Error::arg(format!(
                "input length {} is shorter than the kernel ({})",
                x.nrows(),
                self.conv.kernel
            )));
        }
        let (conv_out, conv_in) = self.conv.forward(self.block(params, 0), x);
        let (act, _) = Relu.forward(&[], &conv_out);
        let (res, residual) = self.residual.forward(self.block(params, 1), &act);
        let (features, attention) = self.attention.forward(self.block(params, 2), &res);
        let (pooled, _) = GlobalAvgPool.forward(&[], &features);
        let (out, _) = self.head.forward(self.block(params, 3), &pooled);
        Ok(ForwardPass {
            outputs: out.row(0).to_vec(),
            features,
            conv_in,
            conv_out,
            residual,
            attention,
            pooled,
        })
    }

    /// Loss of one pass and its gradient w.r.t. the network outputs.
    fn output_loss<F: Scalar>(&self, outputs: &[F], target: Target) -> Result<(F, Vec<F>)> {
        match (self.head_kind, target) {
            (Head::Classify { classes }, Target::Class(c)) => {
                if c >= classes {
                    return Err(Error::arg(format!("class {c} out of range for {classes} classes")));
                }
                Ok(layers::softmax_cross_entropy(outputs, c))
            }
            (Head::Regress, Target::Score(y)) => {
                let (l, g) = layers::squared_error(outputs[0], F::lit(y));
                Ok((l, vec![g]))
            }
            (head, target) => Err(Error::arg(format!("target {target:?} does not match head {head:?}"))),
        }
    }

    pub fn loss<F: Scalar>(&self, params: &[F], x: &Array2<F>, target: Target) -> Result<F> {
        let pass = self.forward(params, x)?;
        Ok(self.output_loss(&pass.outputs, target)?.0)
    }

    /// Loss and full parameter gradient by reverse-mode accumulation.
    pub fn loss_and_grad<F: Scalar>(&self, params: &[F], x: &Array2<F>, target: Target) -> Result<(F, Vec<F>)> {
        let pass = self.forward(params, x)?;
        let (loss, g_out) = self.output_loss(&pass.outputs, target)?;
        let mut grad = vec![F::zero(); self.param_len()];

        let g_out = Array1::from(g_out).insert_axis(ndarray::Axis(0));
        let g_pooled = self.head.backward(self.block(params, 3), &pass.pooled, &g_out, self.block_mut(&mut grad, 3));
        let t = pass.features.nrows();
        let g_feat = GlobalAvgPool.backward(&[], &t, &g_pooled, &mut []);
        let g_res = self
            .attention
            .backward(self.block(params, 2), &pass.attention, &g_feat, self.block_mut(&mut grad, 2));
        let g_act = self
            .residual
            .backward(self.block(params, 1), &pass.residual, &g_res, self.block_mut(&mut grad, 1));
        let g_conv = Relu.backward(&[], &pass.conv_out, &g_act, &mut []);
        self.conv
            .backward(self.block(params, 0), &pass.conv_in, &g_conv, self.block_mut(&mut grad, 0));
        Ok((loss, grad))
    }

    /// Class activation map: `CAM(t) = Σ_k W[output][k] · A[t][k]`.
    pub fn class_activation<F: Scalar>(&self, params: &[F], pass: &ForwardPass<F>, output: usize) -> Result<Vec<F>> {
        if output >= self.head.nout {
            return Err(Error::arg(format!(
                "output index {output} out of range for {} outputs",
                self.head.nout
            )));
        }
        let (w, _) = self.head.weights(self.block(params, 3));
        Ok(pass.features.dot(&w.row(output)).to_vec())
    }

    /// Bias of head output `output`.
    pub fn head_bias<F: Scalar>(&self, params: &[F], output: usize) -> F {
        let (_, b) = self.head.weights(self.block(params, 3));
        b[output]
    }
}
