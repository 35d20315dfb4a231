//! Cubic smoothing spline and spline-based motion-artifact correction.

use serde::{Deserialize, Serialize};

use super::OdSeries;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Artifact detector and spline settings for [`spline_motion_correct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplineConfig {
    /// Number of identical detect-and-correct passes.
    pub passes: i64,
    /// Moving standard deviation window, seconds.
    pub detect_win_s: f64,
    /// A sample is an artifact when its moving std exceeds `detect_k` times
    /// the series-wide median moving std.
    pub detect_k: f64,
    /// Smoothing parameter in `[0, 1]`: 0 is the least-squares line, 1 the
    /// interpolating spline.
    pub smoothing: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self {
            passes: 3,
            detect_win_s: 1.0,
            detect_k: 3.0,
            smoothing: 0.99,
        }
    }
}

/// Values of the cubic smoothing spline through equally spaced samples
/// (spacing `h`), minimizing `p Σ (y - f)² + (1 - p) ∫ f''²`.
///
/// Reinsch formulation: solve `(6(1-p) QᵀQ + p R) u = Qᵀy`, then
/// `f = y - 6(1-p) Q u`, where `Q` takes second divided differences and `R`
/// is the tridiagonal spline Gram matrix.
pub fn smoothing_spline<F: Scalar>(y: &[F], h: F, p: F) -> Result<Vec<F>> {
    let n = y.len();
    if n < 3 {
        return Err(Error::arg("smoothing spline needs at least 3 points"));
    }
    if !(p >= F::zero() && p <= F::one()) {
        return Err(Error::arg("smoothing parameter must lie in [0, 1]"));
    }
    let m = n - 2;
    let inv_h = F::one() / h;
    let six_q = F::lit(6.0) * (F::one() - p);

    // Qᵀ row i has entries (1/h, -2/h, 1/h) at columns i, i+1, i+2, so QᵀQ is
    // pentadiagonal with constant interior bands.
    let q = [inv_h, F::lit(-2.0) * inv_h, inv_h];
    let qtq = |d: usize| -> F {
        // Σ_k q[k] q[k + d] over overlapping taps.
        (0..3 - d).map(|k| q[k] * q[k + d]).sum()
    };
    let r_diag = F::lit(4.0) * h;
    let r_off = h;

    // Band storage: band[i][d] = A[i][i - d], d = 0..=2.
    let mut band = vec![[F::zero(); 3]; m];
    for (i, row) in band.iter_mut().enumerate() {
        row[0] = six_q * qtq(0) + p * r_diag;
        if i >= 1 {
            row[1] = six_q * qtq(1) + p * r_off;
        }
        if i >= 2 {
            row[2] = six_q * qtq(2);
        }
    }
    let rhs: Vec<F> = (0..m)
        .map(|i| (y[i] - F::lit(2.0) * y[i + 1] + y[i + 2]) * inv_h)
        .collect();
    let u = solve_banded_spd(&band, &rhs)?;

    // (Q u)_j = Σ_i Qᵀ[i][j] u_i
    let mut out = y.to_vec();
    for (i, &ui) in u.iter().enumerate() {
        for (k, &qk) in q.iter().enumerate() {
            out[i + k] -= six_q * qk * ui;
        }
    }
    Ok(out)
}

/// Cholesky solve for a symmetric positive-definite matrix with half
/// bandwidth 2, given as lower bands `band[i][d] = A[i][i-d]`.
fn solve_banded_spd<F: Scalar>(band: &[[F; 3]], rhs: &[F]) -> Result<Vec<F>> {
    let m = band.len();
    let mut l = vec![[F::zero(); 3]; m];
    for i in 0..m {
        for d in (0..=2.min(i)).rev() {
            let j = i - d;
            let mut s = band[i][d];
            // Σ_k L[i][k] L[j][k] for k in max(i-2, 0)..j
            for k in i.saturating_sub(2)..j {
                s -= l[i][i - k] * l[j][j - k];
            }
            if d == 0 {
                if !(s > F::zero()) {
                    return Err(Error::Numeric("spline system is not positive definite".into()));
                }
                l[i][0] = s.sqrt();
            } else {
                l[i][d] = s / l[j][0];
            }
        }
    }
    let mut z = rhs.to_vec();
    for i in 0..m {
        for d in 1..=2.min(i) {
            let zi = z[i - d];
            z[i] -= l[i][d] * zi;
        }
        z[i] /= l[i][0];
    }
    for i in (0..m).rev() {
        for d in 1..=2 {
            if i + d < m {
                let zn = z[i + d];
                z[i] -= l[i + d][d] * zn;
            }
        }
        z[i] /= l[i][0];
    }
    Ok(z)
}

/// Centered moving standard deviation with a window of `win` samples
/// (clipped at the ends).
fn moving_std<F: Scalar>(x: &[F], win: usize) -> Vec<F> {
    let n = x.len();
    let half = win / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + win - half).min(n);
            let seg = &x[lo..hi];
            let k = F::from_count(seg.len());
            let m = seg.iter().copied().sum::<F>() / k;
            (seg.iter().map(|&v| (v - m) * (v - m)).sum::<F>() / k).sqrt()
        })
        .collect()
}

fn median<F: Scalar>(xs: &[F]) -> F {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / F::lit(2.0)
    }
}

fn mean_of<F: Scalar>(xs: &[F]) -> F {
    xs.iter().copied().sum::<F>() / F::from_count(xs.len())
}

/// One detect-and-correct pass over a single column.
fn correct_once<F: Scalar>(x: &[F], win: usize, cfg: &SplineConfig, h: F) -> Result<Vec<F>> {
    let sd = moving_std(x, win);
    let threshold = F::lit(cfg.detect_k) * median(&sd);
    let flagged: Vec<bool> = sd.iter().map(|&s| s > threshold).collect();
    if !flagged.iter().any(|&f| f) {
        return Ok(x.to_vec());
    }

    // Runs of equal flag value.
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=x.len() {
        if i == x.len() || flagged[i] != flagged[start] {
            runs.push((start..i, flagged[start]));
            start = i;
        }
    }

    let p = F::lit(cfg.smoothing);
    let mut out: Vec<F> = Vec::with_capacity(x.len());
    for (range, artifact) in runs {
        let seg = &x[range.clone()];
        let mut fixed: Vec<F> = if artifact {
            if seg.len() >= 3 {
                let fit = smoothing_spline(seg, h, p)?;
                seg.iter().zip(&fit).map(|(&a, &b)| a - b).collect()
            } else {
                let m = mean_of(seg);
                seg.iter().map(|&v| v - m).collect()
            }
        } else {
            seg.to_vec()
        };

        // Re-level the head of this segment onto the tail of what precedes it.
        let head = win.min(fixed.len()).max(1);
        let target = if out.is_empty() {
            // Nothing before: keep the segment's original level.
            mean_of(&seg[..head])
        } else {
            let tail = win.min(out.len()).max(1);
            mean_of(&out[out.len() - tail..])
        };
        let shift = target - mean_of(&fixed[..head]);
        for v in fixed.iter_mut() {
            *v += shift;
        }
        out.extend(fixed);
    }
    Ok(out)
}

/// Motion-artifact correction: on each pass, segments whose moving standard
/// deviation exceeds `detect_k` × the median are replaced by their residual
/// from a cubic smoothing spline, and every segment is re-leveled onto its
/// predecessor so the series stays continuous.
pub fn spline_motion_correct<F: Scalar>(series: &OdSeries<F>, cfg: &SplineConfig) -> Result<OdSeries<F>> {
    if cfg.passes < 0 {
        return Err(Error::arg(format!("passes must be >= 0, got {}", cfg.passes)));
    }
    let win = (cfg.detect_win_s * series.sample_rate_hz).round();
    if !(win >= 3.0) {
        return Err(Error::arg(format!(
            "detection window of {} s covers fewer than 3 samples",
            cfg.detect_win_s
        )));
    }
    let win = win as usize;
    let h = F::lit(1.0 / series.sample_rate_hz);
    series.map_columns(|col| {
        let mut cur = col.to_vec();
        for _ in 0..cfg.passes {
            cur = correct_once(&cur, win, cfg, h)?;
        }
        Ok(cur)
    })
}
