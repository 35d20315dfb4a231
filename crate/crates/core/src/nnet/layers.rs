//! Differentiable layers over time-major `T × C` activations.
//!
//! Each layer reads its parameters from a borrowed slice of the flat model
//! vector and writes parameter gradients into the matching slice of the
//! gradient vector, so the optimizer and checkpoint code only ever see one
//! contiguous buffer.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3, Axis};
use rand::Rng as _;

use crate::scalar::Scalar;
use crate::seed::Rng;

pub trait Layer<F: Scalar> {
    /// State saved by `forward` for `backward`.
    type Cache;

    fn param_len(&self) -> usize;

    fn init(&self, params: &mut [F], rng: &mut Rng);

    fn forward(&self, params: &[F], x: &Array2<F>) -> (Array2<F>, Self::Cache);

    /// Accumulates into `grad_params` and returns the gradient w.r.t. the
    /// layer input.
    fn backward(&self, params: &[F], cache: &Self::Cache, grad_out: &Array2<F>, grad_params: &mut [F]) -> Array2<F>;
}

fn uniform<F: Scalar>(dst: &mut [F], limit: f64, rng: &mut Rng) {
    for v in dst {
        *v = F::lit(rng.random_range(-limit..=limit));
    }
}

#[inline]
fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// 1D convolution over time with "same" zero padding (odd kernels).
///
/// Parameters: weights `[cout][kernel][cin]` followed by `cout` biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv1d {
    fn n_weights(&self) -> usize {
        self.cout * self.kernel * self.cin
    }

    fn weights<'a, F: Scalar>(&self, params: &'a [F]) -> (ArrayView3<'a, F>, ArrayView1<'a, F>) {
        let n = self.n_weights();
        let w = ArrayView3::from_shape((self.cout, self.kernel, self.cin), &params[..n]).expect("conv weight shape");
        let b = ArrayView1::from(&params[n..n + self.cout]);
        (w, b)
    }

    /// For tap `j`: the output rows and the input rows they read.
    fn tap_ranges(&self, t: usize, j: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let offset = j as isize - (self.kernel / 2) as isize;
        let out_lo = (-offset).max(0) as usize;
        let out_hi = (t as isize - offset).min(t as isize);
        if out_hi <= out_lo as isize {
            return None;
        }
        let out_hi = out_hi as usize;
        let in_lo = (out_lo as isize + offset) as usize;
        Some((out_lo..out_hi, in_lo..in_lo + (out_hi - out_lo)))
    }
}

impl<F: Scalar> Layer<F> for Conv1d {
    type Cache = Array2<F>;

    fn param_len(&self) -> usize {
        self.n_weights() + self.cout
    }

    fn init(&self, params: &mut [F], rng: &mut Rng) {
        let n = self.n_weights();
        let fan_in = (self.kernel * self.cin) as f64;
        uniform(&mut params[..n], (6.0 / fan_in).sqrt(), rng);
        params[n..].fill(F::zero());
    }

    fn forward(&self, params: &[F], x: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let t = x.nrows();
        let (w, b) = self.weights(params);
        let mut y = Array2::zeros((t, self.cout));
        y += &b;
        for j in 0..self.kernel {
            if let Some((out_r, in_r)) = self.tap_ranges(t, j) {
                let wj = w.slice(s![.., j, ..]);
                let contrib = x.slice(s![in_r, ..]).dot(&wj.t());
                let mut dst = y.slice_mut(s![out_r, ..]);
                dst += &contrib;
            }
        }
        (y, x.clone())
    }

    fn backward(&self, params: &[F], x: &Array2<F>, gy: &Array2<F>, grad_params: &mut [F]) -> Array2<F> {
        let t = x.nrows();
        let (w, _) = self.weights(params);
        let n = self.n_weights();
        let (gw_raw, gb_raw) = grad_params.split_at_mut(n);
        let mut gw = ArrayViewMut3::from_shape((self.cout, self.kernel, self.cin), gw_raw).expect("conv grad shape");
        let mut gb = ArrayViewMut1::from(&mut gb_raw[..self.cout]);
        gb += &gy.sum_axis(Axis(0));

        let mut gx = Array2::zeros(x.raw_dim());
        for j in 0..self.kernel {
            if let Some((out_r, in_r)) = self.tap_ranges(t, j) {
                let wj = w.slice(s![.., j, ..]);
                let g = gy.slice(s![out_r, ..]);
                let xi = x.slice(s![in_r.clone(), ..]);
                let mut gxi = gx.slice_mut(s![in_r, ..]);
                gxi += &g.dot(&wj);
                let mut gwj = gw.slice_mut(s![.., j, ..]);
                gwj += &g.t().dot(&xi);
            }
        }
        gx
    }
}

/// Element-wise `max(0, x)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Relu;

impl<F: Scalar> Layer<F> for Relu {
    type Cache = Array2<F>;

    fn param_len(&self) -> usize {
        0
    }

    fn init(&self, _: &mut [F], _: &mut Rng) {}

    fn forward(&self, _: &[F], x: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let y = x.mapv(|v| v.max(F::zero()));
        (y, x.clone())
    }

    fn backward(&self, _: &[F], x: &Array2<F>, gy: &Array2<F>, _: &mut [F]) -> Array2<F> {
        let mut gx = gy.clone();
        gx.zip_mut_with(x, |g, &v| {
            if v <= F::zero() {
                *g = F::zero();
            }
        });
        gx
    }
}

/// `x + conv2(relu(conv1(x)))` with an identity shortcut; channel count is
/// preserved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

impl Residual {
    pub fn new(channels: usize, kernel: usize) -> Self {
        let conv = Conv1d {
            cin: channels,
            cout: channels,
            kernel,
        };
        Self { conv1: conv, conv2: conv }
    }

    fn split<'a, F: Scalar>(&self, params: &'a [F]) -> (&'a [F], &'a [F]) {
        params.split_at(Layer::<F>::param_len(&self.conv1))
    }
}

pub struct ResidualCache<F> {
    x: Array2<F>,
    h1: Array2<F>,
    a1: Array2<F>,
}

impl<F: Scalar> Layer<F> for Residual {
    type Cache = ResidualCache<F>;

    fn param_len(&self) -> usize {
        Layer::<F>::param_len(&self.conv1) + Layer::<F>::param_len(&self.conv2)
    }

    fn init(&self, params: &mut [F], rng: &mut Rng) {
        let (p1, p2) = params.split_at_mut(Layer::<F>::param_len(&self.conv1));
        self.conv1.init(p1, rng);
        self.conv2.init(p2, rng);
    }

    fn forward(&self, params: &[F], x: &Array2<F>) -> (Array2<F>, ResidualCache<F>) {
        let (p1, p2) = self.split(params);
        let (h1, _) = self.conv1.forward(p1, x);
        let a1 = h1.mapv(|v| v.max(F::zero()));
        let (h2, _) = self.conv2.forward(p2, &a1);
        let y = x + &h2;
        (y, ResidualCache { x: x.clone(), h1, a1 })
    }

    fn backward(&self, params: &[F], cache: &ResidualCache<F>, gy: &Array2<F>, grad_params: &mut [F]) -> Array2<F> {
        let (p1, p2) = self.split(params);
        let (g1, g2) = grad_params.split_at_mut(p1.len());
        let ga1 = self.conv2.backward(p2, &cache.a1, gy, g2);
        let mut gh1 = ga1;
        gh1.zip_mut_with(&cache.h1, |g, &h| {
            if h <= F::zero() {
                *g = F::zero();
            }
        });
        let gx = self.conv1.backward(p1, &cache.x, &gh1, g1);
        gx + gy
    }
}

/// Concurrent spatial and channel squeeze-and-excitation, combined by sum:
///
/// `out[t, c] = x[t, c] · (s[c] + q[t])` where
/// `s = σ(W2 · relu(W1 · mean_t(x) + b1) + b2)` gates channels and
/// `q[t] = σ(ws · x[t, :] + bs)` gates time steps.
///
/// Parameters: `W1 [hidden][c]`, `b1 [hidden]`, `W2 [c][hidden]`, `b2 [c]`,
/// `ws [c]`, `bs [1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scse {
    pub channels: usize,
    pub hidden: usize,
}

struct ScseParams<'a, F> {
    w1: ArrayView2<'a, F>,
    b1: ArrayView1<'a, F>,
    w2: ArrayView2<'a, F>,
    b2: ArrayView1<'a, F>,
    ws: ArrayView1<'a, F>,
    bs: F,
}

impl Scse {
    fn offsets(&self) -> [usize; 6] {
        let (c, h) = (self.channels, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * c;
        let w2 = b1 + h;
        let b2 = w2 + c * h;
        let ws = b2 + c;
        let bs = ws + c;
        [w1, b1, w2, b2, ws, bs]
    }

    fn view<'a, F: Scalar>(&self, p: &'a [F]) -> ScseParams<'a, F> {
        let (c, h) = (self.channels, self.hidden);
        let [w1, b1, w2, b2, ws, bs] = self.offsets();
        ScseParams {
            w1: ArrayView2::from_shape((h, c), &p[w1..b1]).expect("W1"),
            b1: ArrayView1::from(&p[b1..w2]),
            w2: ArrayView2::from_shape((c, h), &p[w2..b2]).expect("W2"),
            b2: ArrayView1::from(&p[b2..ws]),
            ws: ArrayView1::from(&p[ws..bs]),
            bs: p[bs],
        }
    }
}

pub struct ScseCache<F> {
    x: Array2<F>,
    z: Array1<F>,
    hidden_pre: Array1<F>,
    hidden: Array1<F>,
    s: Array1<F>,
    q: Array1<F>,
}

impl<F: Scalar> Layer<F> for Scse {
    type Cache = ScseCache<F>;

    fn param_len(&self) -> usize {
        self.offsets()[5] + 1
    }

    /// First excitation layer fan-in scaled; the gates' final layers start
    /// at zero so both gates open at 0.5.
    fn init(&self, params: &mut [F], rng: &mut Rng) {
        let [_, b1, ..] = self.offsets();
        params.fill(F::zero());
        uniform(&mut params[..b1], (6.0 / self.channels as f64).sqrt(), rng);
    }

    fn forward(&self, params: &[F], x: &Array2<F>) -> (Array2<F>, ScseCache<F>) {
        let p = self.view(params);
        let z = x.mean_axis(Axis(0)).expect("non-empty time axis");
        let hidden_pre = p.w1.dot(&z) + p.b1;
        let hidden = hidden_pre.mapv(|v| v.max(F::zero()));
        let s = (p.w2.dot(&hidden) + p.b2).mapv(sigmoid);
        let q = (x.dot(&p.ws) + p.bs).mapv(sigmoid);
        let mut y = x.clone();
        for (t, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            row.zip_mut_with(&s, |v, &sc| *v *= sc + q[t]);
        }
        (
            y,
            ScseCache {
                x: x.clone(),
                z,
                hidden_pre,
                hidden,
                s,
                q,
            },
        )
    }

    fn backward(&self, params: &[F], cache: &ScseCache<F>, gy: &Array2<F>, grad_params: &mut [F]) -> Array2<F> {
        let p = self.view(params);
        let (c, h) = (self.channels, self.hidden);
        let [w1o, b1o, w2o, b2o, wso, bso] = self.offsets();
        let x = &cache.x;
        let t_len = F::from_count(x.nrows());
        let gx_direct = gy * x; // d out / d gate, before summing

        // Direct path.
        let mut gx = gy.clone();
        for (t, mut row) in gx.axis_iter_mut(Axis(0)).enumerate() {
            row.zip_mut_with(&cache.s, |g, &sc| *g *= sc + cache.q[t]);
        }

        // Channel gate.
        let gs = gx_direct.sum_axis(Axis(0));
        let ge = &gs * &cache.s.mapv(|v| v * (F::one() - v));
        let gw2 = ge.view().insert_axis(Axis(1)).dot(&cache.hidden.view().insert_axis(Axis(0)));
        let ga = p.w2.t().dot(&ge);
        let mut gh = ga;
        gh.zip_mut_with(&cache.hidden_pre, |g, &v| {
            if v <= F::zero() {
                *g = F::zero();
            }
        });
        let gw1 = gh.view().insert_axis(Axis(1)).dot(&cache.z.view().insert_axis(Axis(0)));
        let gz = p.w1.t().dot(&gh);
        gx += &(gz / t_len);

        // Spatial gate.
        let gq = gx_direct.sum_axis(Axis(1));
        let gr = &gq * &cache.q.mapv(|v| v * (F::one() - v));
        let gws = x.t().dot(&gr);
        let gbs = gr.sum();
        gx += &gr.view().insert_axis(Axis(1)).dot(&p.ws.insert_axis(Axis(0)));

        let mut acc = |off: usize, vals: &[F]| {
            for (d, &v) in grad_params[off..off + vals.len()].iter_mut().zip(vals) {
                *d += v;
            }
        };
        acc(w1o, gw1.as_standard_layout().as_slice().expect("contiguous"));
        acc(b1o, gh.as_slice().expect("contiguous"));
        acc(w2o, gw2.as_standard_layout().as_slice().expect("contiguous"));
        acc(b2o, ge.as_slice().expect("contiguous"));
        acc(wso, gws.as_slice().expect("contiguous"));
        acc(bso, &[gbs]);
        debug_assert_eq!(gw1.dim(), (h, c));
        gx
    }
}

/// Mean over the time axis: `T × C → 1 × C`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GlobalAvgPool;

impl<F: Scalar> Layer<F> for GlobalAvgPool {
    type Cache = usize;

    fn param_len(&self) -> usize {
        0
    }

    fn init(&self, _: &mut [F], _: &mut Rng) {}

    fn forward(&self, _: &[F], x: &Array2<F>) -> (Array2<F>, usize) {
        let m = x.mean_axis(Axis(0)).expect("non-empty time axis");
        (m.insert_axis(Axis(0)), x.nrows())
    }

    fn backward(&self, _: &[F], &t: &usize, gy: &Array2<F>, _: &mut [F]) -> Array2<F> {
        let g = gy.row(0).mapv(|v| v / F::from_count(t));
        g.insert_axis(Axis(0)).broadcast((t, gy.ncols())).expect("broadcast").to_owned()
    }
}

/// Fully connected layer on a `1 × nin` row. Parameters: `W [nout][nin]`
/// then `b [nout]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub nin: usize,
    pub nout: usize,
}

impl Dense {
    pub fn weights<'a, F: Scalar>(&self, params: &'a [F]) -> (ArrayView2<'a, F>, ArrayView1<'a, F>) {
        let n = self.nin * self.nout;
        (
            ArrayView2::from_shape((self.nout, self.nin), &params[..n]).expect("dense shape"),
            ArrayView1::from(&params[n..n + self.nout]),
        )
    }
}

impl<F: Scalar> Layer<F> for Dense {
    type Cache = Array2<F>;

    fn param_len(&self) -> usize {
        self.nin * self.nout + self.nout
    }

    fn init(&self, params: &mut [F], rng: &mut Rng) {
        let n = self.nin * self.nout;
        uniform(&mut params[..n], (3.0 / self.nin as f64).sqrt(), rng);
        params[n..].fill(F::zero());
    }

    fn forward(&self, params: &[F], x: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let (w, b) = self.weights(params);
        let y = x.dot(&w.t()) + b;
        (y, x.clone())
    }

    fn backward(&self, params: &[F], x: &Array2<F>, gy: &Array2<F>, grad_params: &mut [F]) -> Array2<F> {
        let (w, _) = self.weights(params);
        let n = self.nin * self.nout;
        let (gw, gb) = grad_params.split_at_mut(n);
        let mut gw = ArrayViewMut2::from_shape((self.nout, self.nin), gw).expect("dense grad shape");
        gw += &gy.t().dot(x);
        let mut gb = ArrayViewMut1::from(&mut gb[..self.nout]);
        gb += &gy.sum_axis(Axis(0));
        gy.dot(&w)
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `class`, with its gradient
/// w.r.t. the logits.
pub fn softmax_cross_entropy<F: Scalar>(logits: &[F], class: usize) -> (F, Vec<F>) {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln();
    let loss = lse - logits[class];
    let mut grad = softmax(logits);
    grad[class] -= F::one();
    (loss, grad)
}

/// Squared error `(pred - target)²` and its derivative.
pub fn squared_error<F: Scalar>(pred: F, target: F) -> (F, F) {
    let d = pred - target;
    (d * d, d + d)
}
