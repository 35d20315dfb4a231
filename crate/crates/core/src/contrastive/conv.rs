//! Strided 3×3 convolution on `H × W × C` images, lowered to a matrix
//! product over extracted patches.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::scalar::Scalar;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCache<F> {
    patches: Array2<F>,
    in_shape: (usize, usize),
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    pub fn param_len(&self) -> usize {
        self.cout * self.patch_len() + self.cout
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn weights<'a, F: Scalar>(&self, p: &'a [F]) -> (ArrayView2<'a, F>, ArrayView1<'a, F>) {
        let n = self.cout * self.patch_len();
        (
            ArrayView2::from_shape((self.cout, self.patch_len()), &p[..n]).expect("conv2d weights"),
            ArrayView1::from(&p[n..n + self.cout]),
        )
    }

    pub fn init<F: Scalar>(&self, p: &mut [F], rng: &mut Rng) {
        let n = self.cout * self.patch_len();
        let limit = (6.0 / self.patch_len() as f64).sqrt();
        for v in &mut p[..n] {
            *v = F::lit(rng.random_range(-limit..=limit));
        }
        p[n..].fill(F::zero());
    }

    /// Source pixel for output position `o` and tap `k`, if inside the image.
    fn source(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }

    fn im2col<F: Scalar>(&self, x: &Array3<F>) -> Array2<F> {
        let (h, w, _) = x.dim();
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let mut cols = Array2::zeros((ho * wo, self.patch_len()));
        for oy in 0..ho {
            for ox in 0..wo {
                let mut row = cols.row_mut(oy * wo + ox);
                for ky in 0..self.kernel {
                    let Some(iy) = self.source(oy, ky, h) else { continue };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.source(ox, kx, w) else { continue };
                        let at = (ky * self.kernel + kx) * self.cin;
                        row.slice_mut(s![at..at + self.cin]).assign(&x.slice(s![iy, ix, ..]));
                    }
                }
            }
        }
        cols
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &Array3<F>) -> (Array3<F>, Conv2dCache<F>) {
        let (h, w, c) = x.dim();
        debug_assert_eq!(c, self.cin);
        let (wt, b) = self.weights(p);
        let patches = self.im2col(x);
        let y = patches.dot(&wt.t()) + b;
        let y = y
            .into_shape_with_order((self.out_dim(h), self.out_dim(w), self.cout))
            .expect("conv2d output shape");
        (y, Conv2dCache { patches, in_shape: (h, w) })
    }

    /// Accumulates parameter gradients; the input gradient is only built
    /// when `want_input` is set.
    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &Conv2dCache<F>,
        gy: &Array3<F>,
        grad: &mut [F],
        want_input: bool,
    ) -> Option<Array3<F>> {
        let (ho, wo, _) = gy.dim();
        let gy2 = gy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((ho * wo, self.cout))
            .expect("conv2d grad shape");
        let n = self.cout * self.patch_len();
        let (gw, gb) = grad.split_at_mut(n);
        let mut gw = ArrayViewMut2::from_shape((self.cout, self.patch_len()), gw).expect("conv2d grad");
        gw += &gy2.t().dot(&cache.patches);
        let mut gb = ArrayViewMut1::from(&mut gb[..self.cout]);
        gb += &gy2.sum_axis(Axis(0));
        if !want_input {
            return None;
        }
        let (wt, _) = self.weights(p);
        let gcols = gy2.dot(&wt);
        let (h, w) = cache.in_shape;
        let mut gx = Array3::zeros((h, w, self.cin));
        for oy in 0..ho {
            for ox in 0..wo {
                let row = gcols.row(oy * wo + ox);
                for ky in 0..self.kernel {
                    let Some(iy) = self.source(oy, ky, h) else { continue };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.source(ox, kx, w) else { continue };
                        let at = (ky * self.kernel + kx) * self.cin;
                        let mut dst = gx.slice_mut(s![iy, ix, ..]);
                        dst += &row.slice(s![at..at + self.cin]);
                    }
                }
            }
        }
        Some(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_halves() {
        let c = Conv2d::new(3, 4);
        assert_eq!(c.out_dim(32), 16);
        assert_eq!(c.out_dim(9), 5);
    }

    #[test]
    fn single_tap_by_hand() {
        // One input and output channel, only the centre tap set.
        let c = Conv2d::new(1, 1);
        let mut p = vec![0.0; c.param_len()];
        p[4] = 2.0;
        p[9] = 1.0;
        let x = Array3::from_shape_fn((4, 4, 1), |(i, j, _)| (i * 4 + j) as f64);
        let (y, _) = c.forward(&p, &x);
        assert_eq!(y.dim(), (2, 2, 1));
        // Stride 2 samples pixels (0,0), (0,2), (2,0), (2,2).
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![1.0, 5.0, 17.0, 21.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = Conv2d::new(2, 3);
        let mut rng = crate::seed::rng(4);
        let mut p = vec![0.0; c.param_len()];
        c.init(&mut p, &mut rng);
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let x = Array3::from_shape_fn((7, 6, 2), |_| rng.random_range(-1.0..1.0));
        let (y, cache) = c.forward(&p, &x);
        let r = Array3::from_shape_fn(y.dim(), |_| rng.random_range(-1.0..1.0));
        let mut g = vec![0.0; p.len()];
        let gx = c.backward(&p, &cache, &r, &mut g, true).unwrap();
        let loss = |p: &[f64], x: &Array3<f64>| (&c.forward(p, x).0 * &r).sum();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (loss(&up, &x) - loss(&dn, &x)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}");
        }
        for idx in [(0, 0, 0), (3, 2, 1), (6, 5, 0), (5, 1, 1)] {
            let mut up = x.clone();
            up[idx] += h;
            let mut dn = x.clone();
            dn[idx] -= h;
            let fd = (loss(&p, &up) - loss(&p, &dn)) / (2.0 * h);
            assert!((fd - gx[idx]).abs() < 1e-7, "input {idx:?}");
        }
    }
}
