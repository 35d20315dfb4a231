//! Butterworth band-pass design (bilinear transform) and forward-backward
//! filtering in second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::OdSeries;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Prototype order of the default fNIRS band-pass.
pub const DEFAULT_ORDER: usize = 3;

/// One biquad: `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Transposed direct-form II state after settling on a unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let s2 = self.b[2] - self.a[2] * g;
        let s1 = self.b[1] - self.a[1] * g + s2;
        [s1, s2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthBandpass {
    order: usize,
    sample_rate_hz: f64,
    sections: Vec<Sos>,
}

impl ButterworthBandpass {
    /// Designs an `order`-th order prototype mapped to the band
    /// `[low_hz, high_hz]`; the digital filter has order `2 * order`.
    pub fn design(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::arg("filter order must be at least 1"));
        }
        let nyquist = sample_rate_hz / 2.0;
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
            return Err(Error::arg(format!(
                "band-pass cutoffs must satisfy 0 < low < high < fs/2 (got {low_hz}, {high_hz}, fs/2 = {nyquist})"
            )));
        }

        // Analog prototype poles on the unit circle's left half.
        let n = order as i64;
        let proto: Vec<Complex64> = (0..n)
            .map(|k| {
                let m = (-n + 1 + 2 * k) as f64;
                -(Complex64::i() * PI * m / (2.0 * n as f64)).exp()
            })
            .collect();

        // Pre-warp against a design rate of 2 (normalized frequencies).
        let fs_design = 2.0;
        let warp = |f: f64| {
            let wn = 2.0 * f / sample_rate_hz;
            2.0 * fs_design * (PI * wn / fs_design).tan()
        };
        let (w_lo, w_hi) = (warp(low_hz), warp(high_hz));
        let bw = w_hi - w_lo;
        let w0 = (w_lo * w_hi).sqrt();

        // Low-pass to band-pass: each pole splits in two; `order` zeros at s = 0.
        let mut poles = Vec::with_capacity(2 * order);
        for p in &proto {
            let p_lp = p * (bw / 2.0);
            let root = (p_lp * p_lp - w0 * w0).sqrt();
            poles.push(p_lp + root);
            poles.push(p_lp - root);
        }
        let mut gain = bw.powi(order as i32);

        // Bilinear transform: s = 0 → z = 1, s = ∞ → z = -1.
        let fs2 = 2.0 * fs_design;
        let num: Complex64 = std::iter::repeat_n(Complex64::new(fs2, 0.0), order)
            .product();
        let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
        gain *= (num / den).re;
        let z_poles: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();

        let sections = pair_sections(&z_poles, order, gain)?;
        Ok(Self {
            order,
            sample_rate_hz,
            sections,
        })
    }

    pub fn sections(&self) -> &[Sos] {
        &self.sections
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Minimum series length accepted by [`Self::filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order * 2
    }

    /// Complex response `H(e^{jω})` at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s.b[0] + s.b[1] * z1 + s.b[2] * z2) / (s.a[0] + s.a[1] * z1 + s.a[2] * z2))
            .product()
    }

    /// One causal pass through the cascade. With `settle`, each section
    /// starts in the state it would hold after a long run at the input's
    /// first value (scaled by the DC gain of the sections ahead of it).
    fn run<F: Scalar>(&self, x: &mut [F], settle: bool) {
        let mut level = x[0];
        for sec in &self.sections {
            let [b0, b1, b2] = sec.b.map(F::lit);
            let [_, a1, a2] = sec.a.map(F::lit);
            let (mut s1, mut s2) = if settle {
                let st = sec.step_state();
                (F::lit(st[0]) * level, F::lit(st[1]) * level)
            } else {
                (F::zero(), F::zero())
            };
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + s1;
                s1 = b1 * xin - a1 * y + s2;
                s2 = b2 * xin - a2 * y;
                *v = y;
            }
            level *= F::lit(sec.dc_gain());
        }
    }

    /// Causal filtering from rest.
    pub fn filter<F: Scalar>(&self, x: &[F]) -> Vec<F> {
        let mut y = x.to_vec();
        if !y.is_empty() {
            self.run(&mut y, false);
        }
        y
    }

    /// Zero-phase filtering: odd-extend by [`Self::pad_len`] samples at both
    /// ends, run forward then backward with step-settled initial states, and
    /// trim the extension.
    pub fn filtfilt<F: Scalar>(&self, x: &[F]) -> Result<Vec<F>> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(Error::arg(format!(
                "series of {} samples is shorter than the filter warm-up of {} samples",
                x.len(),
                pad + 1
            )));
        }
        let n = x.len();
        let two = F::lit(2.0);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| two * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| two * x[n - 1] - x[n - 1 - i]));

        self.run(&mut ext, true);
        ext.reverse();
        self.run(&mut ext, true);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Groups digital poles into conjugate pairs, each with one zero at `z = 1`
/// and one at `z = -1`. The overall gain goes on the first section.
fn pair_sections(poles: &[Complex64], order: usize, gain: f64) -> Result<Vec<Sos>> {
    let tol = 1e-10;
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    if upper.len() * 2 + real.len() != poles.len() || !real.len().is_multiple_of(2) {
        return Err(Error::Numeric("band-pass poles do not pair into sections".into()));
    }
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.total_cmp(b));

    let mut sections: Vec<Sos> = upper
        .iter()
        .map(|p| Sos {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        sections.push(Sos {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    debug_assert_eq!(sections.len(), order);
    for b in sections[0].b.iter_mut() {
        *b *= gain;
    }
    Ok(sections)
}

/// Zero-phase Butterworth band-pass applied to every wavelength column.
pub fn bandpass_filter<F: Scalar>(od: &OdSeries<F>, low_hz: f64, high_hz: f64) -> Result<OdSeries<F>> {
    let filter = ButterworthBandpass::design(DEFAULT_ORDER, low_hz, high_hz, od.sample_rate_hz)?;
    od.map_columns(|col| filter.filtfilt(col))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 7.8125;

    /// Magnitude of the analog Butterworth band-pass at the pre-warped
    /// frequency, squared once more for the forward-backward pass.
    fn analytic_zero_phase_gain(order: usize, f: f64, lo: f64, hi: f64, fs: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh, w) = (warp(lo), warp(hi), warp(f));
        let w0sq = wl * wh;
        let x = (w * w - w0sq) / (w * (wh - wl));
        1.0 / (1.0 + x.powi(2 * order as i32))
    }

    #[test]
    fn digital_response_matches_analytic_butterworth() {
        let f = ButterworthBandpass::design(3, 0.01, 0.5, FS).unwrap();
        for &hz in &[0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 1.0, 2.0, 3.5] {
            let digital = f.response(hz).norm_sqr();
            let analytic = analytic_zero_phase_gain(3, hz, 0.01, 0.5, FS);
            assert!((digital - analytic).abs() < 1e-6, "{hz} Hz: {digital} vs {analytic}");
        }
        // -3 dB at both edges
        assert!((f.response(0.01).norm() - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((f.response(0.5).norm() - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn design_rejects_bad_cutoffs() {
        assert!(ButterworthBandpass::design(3, 0.0, 0.5, FS).is_err());
        assert!(ButterworthBandpass::design(3, 0.5, 0.4, FS).is_err());
        assert!(ButterworthBandpass::design(3, 0.01, 4.0, FS).is_err());
        assert!(ButterworthBandpass::design(0, 0.01, 0.5, FS).is_err());
    }

    #[test]
    fn short_series_rejected() {
        let f = ButterworthBandpass::design(3, 0.01, 0.5, FS).unwrap();
        assert_eq!(f.pad_len(), 18);
        assert!(f.filtfilt(&[1.0f64; 18]).is_err());
        assert!(f.filtfilt(&[1.0f64; 19]).is_ok());
    }

    #[test]
    fn constant_input_is_removed() {
        let f = ButterworthBandpass::design(3, 0.01, 0.5, FS).unwrap();
        let y = f.filtfilt(&vec![4.0f64; 500]).unwrap();
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 1e-3 * 4.0, "{peak}");
    }

    #[test]
    fn works_in_f32() {
        let f = ButterworthBandpass::design(3, 0.05, 0.5, FS).unwrap();
        let x: Vec<f32> = (0..2000)
            .map(|i| (2.0 * std::f32::consts::PI * 0.2 * i as f32 / FS as f32).sin())
            .collect();
        let y = f.filtfilt(&x).unwrap();
        let mid = &y[800..1200];
        let peak = mid.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.05, "{peak}");
    }

    #[test]
    fn filtfilt_is_linear() {
        let f = ButterworthBandpass::design(3, 0.01, 0.5, FS).unwrap();
        let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.13).sin() + 0.01 * i as f64).collect();
        let z: Vec<f64> = (0..400).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let (a, b) = (1.7, -0.6);
        let comb: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
        let lhs = f.filtfilt(&comb).unwrap();
        let fx = f.filtfilt(&x).unwrap();
        let fz = f.filtfilt(&z).unwrap();
        for i in 0..400 {
            assert!((lhs[i] - (a * fx[i] + b * fz[i])).abs() < 1e-9);
        }
    }
}
