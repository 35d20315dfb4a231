//! Stochastic view generation for contrastive training.

use ndarray::{s, Array3, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Frame;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Fraction of the source area kept by the random crop.
    pub crop_scale: [f64; 2],
    /// Aspect ratio (width / height) range of the crop.
    pub crop_ratio: [f64; 2],
    pub jitter_prob: f64,
    /// Brightness factor drawn from `1 ± brightness`.
    pub brightness: f64,
    /// Contrast factor drawn from `1 ± contrast`.
    pub contrast: f64,
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
    pub flip_prob: f64,
    pub grayscale_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale: [0.08, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
            jitter_prob: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            blur_prob: 0.5,
            blur_sigma: [0.1, 2.0],
            flip_prob: 0.5,
            grayscale_prob: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = [self.jitter_prob, self.blur_prob, self.flip_prob, self.grayscale_prob];
        if prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::arg("augmentation probabilities must lie in [0, 1]"));
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(self.crop_scale) || self.crop_scale[1] > 1.0 || !ordered(self.crop_ratio) || !ordered(self.blur_sigma) {
            return Err(Error::arg("augmentation ranges must be positive and ordered"));
        }
        if !(0.0..1.0).contains(&self.brightness) || !(0.0..1.0).contains(&self.contrast) {
            return Err(Error::arg("jitter strengths must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Bilinear resampling of a `(y0, x0, h, w)` window to `out × out`.
pub(crate) fn resize_window<F: Scalar>(img: &Array3<F>, window: (usize, usize, usize, usize), out: usize) -> Array3<F> {
    let (y0, x0, h, w) = window;
    let ch = img.dim().2;
    let sy = h as f64 / out as f64;
    let sx = w as f64 / out as f64;
    let coord = |o: usize, scale: f64, len: usize| {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, c - lo as f64)
    };
    let mut dst = Array3::zeros((out, out, ch));
    for oy in 0..out {
        let (ya, yb, fy) = coord(oy, sy, h);
        for ox in 0..out {
            let (xa, xb, fx) = coord(ox, sx, w);
            for c in 0..ch {
                let p = |y: usize, x: usize| img[[y0 + y, x0 + x, c]].as_f64();
                let top = p(ya, xa) * (1.0 - fx) + p(ya, xb) * fx;
                let bottom = p(yb, xa) * (1.0 - fx) + p(yb, xb) * fx;
                dst[[oy, ox, c]] = F::lit(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    dst
}

fn random_crop_window(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (cfg.crop_ratio[0].ln(), cfg.crop_ratio[1].ln());
    for _ in 0..10 {
        let target = area * rng.random_range(cfg.crop_scale[0]..=cfg.crop_scale[1]);
        let ratio = rng.random_range(lr0..=lr1).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let chh = (target / ratio).sqrt().round() as usize;
        if cw >= 1 && chh >= 1 && cw <= w && chh <= h {
            let y0 = rng.random_range(0..=h - chh);
            let x0 = rng.random_range(0..=w - cw);
            return (y0, x0, chh, cw);
        }
    }
    (0, 0, h, w)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge clamping.
fn blur<F: Scalar>(img: &Array3<F>, sigma: f64) -> Array3<F> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, ch) = img.dim();
    let pass = |src: &Array3<F>, along_rows: bool| {
        let mut dst = Array3::zeros(src.raw_dim());
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (i, kv) in k.iter().enumerate() {
                        let d = i as isize - r;
                        let (yy, xx) = if along_rows {
                            ((y as isize + d).clamp(0, h as isize - 1) as usize, x)
                        } else {
                            (y, (x as isize + d).clamp(0, w as isize - 1) as usize)
                        };
                        acc += kv * src[[yy, xx, c]].as_f64();
                    }
                    dst[[y, x, c]] = F::lit(acc);
                }
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}

/// Standardizes each channel to zero mean and unit variance; a constant
/// channel is only centred.
pub(crate) fn standardize_channels<F: Scalar>(img: &mut Array3<F>) {
    for mut ch in img.axis_iter_mut(Axis(2)) {
        let n = F::from_count(ch.len());
        let mean = ch.sum() / n;
        let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let sd = var.sqrt();
        let scale = if sd > F::lit(1e-12) { sd } else { F::one() };
        ch.mapv_inplace(|v| (v - mean) / scale);
    }
}

/// One augmented, standardized `size × size` view.
pub fn augment_view<F: Scalar>(frame: &Frame<F>, size: usize, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Array3<F>> {
    let (h, w, _) = frame.pixels.dim();
    if h < size || w < size {
        return Err(Error::arg(format!("frame {h}x{w} is smaller than the {size}x{size} crop")));
    }
    let window = random_crop_window(h, w, cfg, rng);
    let mut img = resize_window(&frame.pixels, window, size);

    if rng.random_bool(cfg.jitter_prob) {
        let b = F::lit(rng.random_range(1.0 - cfg.brightness..=1.0 + cfg.brightness));
        let c = F::lit(rng.random_range(1.0 - cfg.contrast..=1.0 + cfg.contrast));
        img.mapv_inplace(|v| v * b);
        let mean = img.mean().unwrap_or_else(F::zero);
        img.mapv_inplace(|v| ((v - mean) * c + mean).max(F::zero()).min(F::one()));
    }
    if rng.random_bool(cfg.blur_prob) {
        img = blur(&img, rng.random_range(cfg.blur_sigma[0]..=cfg.blur_sigma[1]));
    }
    if rng.random_bool(cfg.flip_prob) {
        img = img.slice(s![.., ..;-1, ..]).to_owned();
    }
    if rng.random_bool(cfg.grayscale_prob) {
        let luma = [0.299, 0.587, 0.114].map(F::lit);
        for mut px in img.lanes_mut(Axis(2)) {
            let y = px[0] * luma[0] + px[1] * luma[1] + px[2] * luma[2];
            px.fill(y);
        }
    }
    standardize_channels(&mut img);
    Ok(img)
}

/// Two independent views of the same frame.
pub fn augment_pair<F: Scalar>(
    frame: &Frame<F>,
    size: usize,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Array3<F>, Array3<F>)> {
    Ok((augment_view(frame, size, cfg, rng)?, augment_view(frame, size, cfg, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, seed: u64) -> Frame<f64> {
        let mut rng = crate::seed::rng(seed);
        Frame::new(Array3::from_shape_fn((h, w, 3), |_| rng.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let f = frame(40, 50, 1);
        let cfg = AugmentConfig::default();
        let a = augment_pair(&f, 16, &cfg, &mut crate::seed::rng(9)).unwrap();
        let b = augment_pair(&f, 16, &cfg, &mut crate::seed::rng(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, a.1);
    }

    #[test]
    fn grayscale_makes_channels_equal() {
        let f = frame(20, 20, 2);
        let cfg = AugmentConfig {
            grayscale_prob: 1.0,
            ..Default::default()
        };
        let v = augment_view(&f, 12, &cfg, &mut crate::seed::rng(3)).unwrap();
        for px in v.lanes(Axis(2)) {
            assert!((px[0] - px[1]).abs() < 1e-12 && (px[1] - px[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn output_size_is_fixed() {
        let cfg = AugmentConfig::default();
        let mut rng = crate::seed::rng(4);
        for (h, w) in [(16, 16), (33, 80), (64, 20)] {
            let v = augment_view(&frame(h, w, 5), 16, &cfg, &mut rng).unwrap();
            assert_eq!(v.dim(), (16, 16, 3));
        }
        assert!(augment_view(&frame(10, 40, 6), 16, &cfg, &mut rng).is_err());
    }

    #[test]
    fn views_are_standardized() {
        let v = augment_view(&frame(24, 24, 7), 16, &AugmentConfig::default(), &mut crate::seed::rng(8)).unwrap();
        for ch in v.axis_iter(Axis(2)) {
            assert!(ch.mean().unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn full_window_resize_is_identity() {
        let f = frame(9, 9, 10);
        let r = resize_window(&f.pixels, (0, 0, 9, 9), 9);
        for (a, b) in r.iter().zip(f.pixels.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Array3::<f64>::from_elem((6, 7, 3), 0.25);
        let b = blur(&img, 1.3);
        assert!(b.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
