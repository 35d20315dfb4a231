//! Outlier removal, normality testing and one-sided two-sample tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

/// Quantile by linear interpolation between order statistics of a sorted
/// sample (`h = (n − 1)·q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("sample contains non-finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Keeps the values inside `[Q1 − k·IQR, Q3 + k·IQR]`, in input order.
pub fn tukey_fences(values: &[f64], k: f64) -> Result<Vec<f64>> {
    if values.len() < 4 {
        return Err(Error::arg(format!("outlier fences need at least 4 values, got {}", values.len())));
    }
    let s = sorted_copy(values)?;
    let (q1, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
    Ok(values.iter().copied().filter(|v| (lo..=hi).contains(v)).collect())
}

/// `c[0] + c[1]·x + c[2]·x² + …`
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W and its p-value (Royston's approximation).
pub fn shapiro_wilk(values: &[f64]) -> Result<(f64, f64)> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::arg(format!("Shapiro-Wilk needs 3..=5000 values, got {n}")));
    }
    let x = sorted_copy(values)?;
    let range = x[n - 1] - x[0];
    if range < 1e-19 * x[n - 1].abs().max(1.0) {
        // A constant sample carries no evidence against normality.
        return Ok((1.0, 1.0));
    }
    let std_normal = Normal::standard();
    let an = n as f64;
    let half = n / 2;

    // Coefficients for the lower half, positive, normalized to unit sum of
    // squares over both halves.
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let m: Vec<f64> = (1..=half)
            .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // W as the squared correlation of the antisymmetric coefficient vector
    // with the ordered sample, in the cancellation-safe 1 − W form.
    let coeff = |i: usize| {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[i],
            std::cmp::Ordering::Greater => a[j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };
    let sa = (0..n).map(coeff).sum::<f64>() / an;
    let sx = x.iter().map(|v| v / range).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in x.iter().enumerate() {
        let asa = coeff(i) - sa;
        let xsx = xi / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let pw = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - std::f64::consts::PI / 3.0);
        return Ok((w, pw.clamp(0.0, 1.0)));
    }
    let mut y = w1.ln();
    let (mean, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let lx = an.ln();
        (poly(&C5, lx), poly(&C6, lx).exp())
    };
    let p = 1.0 - std_normal.cdf((y - mean) / sd);
    Ok((w, p.clamp(0.0, 1.0)))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// One-sided Welch test of `mean(hi) > mean(lo)`: `(t, p)`.
pub fn welch_t_greater(hi: &[f64], lo: &[f64]) -> Result<(f64, f64)> {
    if hi.len() < 2 || lo.len() < 2 {
        return Err(Error::arg("Welch test needs at least 2 values per sample"));
    }
    let (m1, v1) = mean_var(hi);
    let (m2, v2) = mean_var(lo);
    let (s1, s2) = (v1 / hi.len() as f64, v2 / lo.len() as f64);
    let se = (s1 + s2).sqrt();
    let diff = m1 - m2;
    if se == 0.0 {
        return Ok(if diff > 0.0 { (f64::INFINITY, 0.0) } else { (0.0, 0.5) });
    }
    let t = diff / se;
    let df = (s1 + s2).powi(2) / (s1 * s1 / (hi.len() as f64 - 1.0) + s2 * s2 / (lo.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok((t, (1.0 - dist.cdf(t)).clamp(0.0, 1.0)))
}

/// Mid-ranks (1-based) of the pooled sample, doubled so they are integers.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && pooled[idx[end]] == pooled[idx[start]] {
            end += 1;
        }
        // Ranks start+1..=end; their mean doubled is start + 1 + end.
        for &i in &idx[start..end] {
            ranks[i] = (start + 1 + end) as u64;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Mann-Whitney `U` of `x` against `y`: pairs with `x > y` plus half the ties.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> f64 {
    let mut pooled = x.to_vec();
    pooled.extend_from_slice(y);
    let (ranks, _) = doubled_midranks(&pooled);
    let rank_sum = ranks[..x.len()].iter().sum::<u64>() as f64 / 2.0;
    let n1 = x.len() as f64;
    rank_sum - n1 * (n1 + 1.0) / 2.0
}

/// Largest per-sample size for which the permutation distribution is
/// enumerated exactly.
pub const EXACT_MAX: usize = 20;

/// One-sided Mann-Whitney test that `x` tends to exceed `y`: `(U, p)`.
pub fn mann_whitney_greater(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::arg("Mann-Whitney needs non-empty samples"));
    }
    let (n1, n2) = (x.len(), y.len());
    let mut pooled = x.to_vec();
    pooled.extend_from_slice(y);
    let (ranks, ties) = doubled_midranks(&pooled);
    let observed: u64 = ranks[..n1].iter().sum();
    let u = observed as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;

    if n1 <= EXACT_MAX && n2 <= EXACT_MAX {
        // counts[k][s]: subsets of size k with doubled rank sum s.
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![vec![0.0f64; total as usize + 1]; n1 + 1];
        counts[0][0] = 1.0;
        for &r in &ranks {
            for k in (1..=n1).rev() {
                for s in (r as usize..=total as usize).rev() {
                    let add = counts[k - 1][s - r as usize];
                    if add != 0.0 {
                        counts[k][s] += add;
                    }
                }
            }
        }
        let all: f64 = counts[n1].iter().sum();
        let tail: f64 = counts[n1][observed as usize..].iter().sum();
        return Ok((u, (tail / all).clamp(0.0, 1.0)));
    }

    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = a * b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok((u, 1.0));
    }
    let z = (u - a * b / 2.0 - 0.5) / var.sqrt();
    Ok((u, (1.0 - Normal::standard().cdf(z)).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestUsed {
    TOneSided,
    MannWhitneyOneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AGreater,
    BGreater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub normal_a: bool,
    pub normal_b: bool,
    /// `(W, p)` of each post-fence sample.
    pub shapiro_a: (f64, f64),
    pub shapiro_b: (f64, f64),
    pub kept_a: usize,
    pub kept_b: usize,
    pub test_used: TestUsed,
    /// Welch `t`, or `U` of the larger-mean sample.
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub direction: Direction,
}

/// Fences both samples, gates on normality, then tests whether the
/// larger-mean sample is greater.
pub fn significance_test(a: &[f64], b: &[f64]) -> Result<StatReport> {
    let fa = tukey_fences(a, 1.5)?;
    let fb = tukey_fences(b, 1.5)?;
    let sw_a = shapiro_wilk(&fa)?;
    let sw_b = shapiro_wilk(&fb)?;
    let (normal_a, normal_b) = (sw_a.1 >= ALPHA, sw_b.1 >= ALPHA);
    let direction = if mean_var(&fa).0 >= mean_var(&fb).0 {
        Direction::AGreater
    } else {
        Direction::BGreater
    };
    let (hi, lo) = match direction {
        Direction::AGreater => (&fa, &fb),
        Direction::BGreater => (&fb, &fa),
    };
    let (test_used, (statistic, p_value)) = if normal_a && normal_b {
        (TestUsed::TOneSided, welch_t_greater(hi, lo)?)
    } else {
        (TestUsed::MannWhitneyOneSided, mann_whitney_greater(hi, lo)?)
    };
    Ok(StatReport {
        normal_a,
        normal_b,
        shapiro_a: sw_a,
        shapiro_b: sw_b,
        kept_a: fa.len(),
        kept_b: fb.len(),
        test_used,
        statistic,
        p_value,
        significant: p_value < ALPHA,
        direction,
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    match values.len() {
        0 => None,
        1 => Some((values[0], 0.0)),
        _ => {
            let (m, v) = mean_var(values);
            Some((m, v.sqrt()))
        }
    }
}

/// `0.889±.011`: three decimals, leading zero of the deviation dropped.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    let s = format!("{std:.3}");
    let s = s.strip_prefix('0').unwrap_or(&s);
    format!("{mean:.3}±{s}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn quartiles_and_fences() {
        let v: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        assert_eq!(quantile_sorted(&s, 0.25), 3.25);
        assert_eq!(quantile_sorted(&s, 0.75), 7.75);
        assert_eq!(tukey_fences(&v, 1.5).unwrap(), v[..9].to_vec());
        assert_eq!(tukey_fences(&[2.0; 6], 1.5).unwrap(), vec![2.0; 6]);
        assert!(tukey_fences(&[1.0, 2.0, 3.0], 1.5).is_err());
    }

    #[test]
    fn fences_are_single_pass() {
        let clean: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(tukey_fences(&clean, 1.5).unwrap(), clean);
        // Removing -15.1 and 10.6 narrows the quartiles so that 6.1 falls
        // outside the new fences; a second pass is not a no-op here.
        let v = [-1.0, 6.1, -1.5, 1.4, 0.6, -15.1, 10.6, 1.7];
        let once = tukey_fences(&v, 1.5).unwrap();
        assert_eq!(once, vec![-1.0, 6.1, -1.5, 1.4, 0.6, 1.7]);
        assert_eq!(tukey_fences(&once, 1.5).unwrap(), vec![-1.0, -1.5, 1.4, 0.6, 1.7]);
    }

    // Reference values from an independent implementation of the same
    // algorithm.
    #[test]
    fn shapiro_wilk_reference_samples() {
        let cases: [(&[f64], f64, f64); 6] = [
            (
                &[148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0],
                0.7888146948631716,
                0.006703814061898823,
            ),
            (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
            (&[1.0, 2.0, 3.0, 10.0], 0.8068856643251408, 0.11515298127551521),
            (&[1.0, 1.5, 2.7, 3.1, 9.0], 0.787743822829092, 0.06414305515031996),
            (
                &[2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 4.9, 3.7, 4.1, 2.2, 3.9],
                0.9677858607550697,
                0.8862802708607276,
            ),
            (
                &(1..=20).map(f64::from).collect::<Vec<_>>(),
                0.9603751832429884,
                0.5513717457916771,
            ),
        ];
        for (x, w, p) in cases {
            let (gw, gp) = shapiro_wilk(x).unwrap();
            assert!(close(gw, w, 1e-6), "W {gw} vs {w} for n={}", x.len());
            assert!(close(gp, p, 1e-5), "p {gp} vs {p} for n={}", x.len());
        }
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert_eq!(shapiro_wilk(&[3.0; 5]).unwrap(), (1.0, 1.0));
    }

    fn brute_force_u(x: &[f64], y: &[f64]) -> f64 {
        let mut u = 0.0;
        for a in x {
            for b in y {
                if a > b {
                    u += 1.0;
                } else if a == b {
                    u += 0.5;
                }
            }
        }
        u
    }

    #[test]
    fn u_counts_pairwise_wins() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [3.0, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(mann_whitney_u(&a, &b), 4.5);
        assert_eq!(brute_force_u(&a, &b), 4.5);
        assert_eq!(mann_whitney_u(&b, &a), 20.5);
    }

    /// Exact tail probability by enumerating every split of the pooled
    /// sample, with U counted pairwise.
    fn enumerated_p(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let n = pooled.len();
        let observed = brute_force_u(x, y);
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != x.len() {
                continue;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (i, v) in pooled.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        xs.push(*v);
                    } else {
                        ys.push(*v);
                    }
                }
                (xs, ys)
            };
            total += 1;
            if brute_force_u(&xs, &ys) >= observed - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn exact_p_matches_enumeration() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[3.0, 4.0, 5.0, 6.0, 7.0], &[1.0, 2.0, 3.0, 4.0, 5.0]),
            (&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]),
            (&[0.5, 0.9, 0.9, 1.2, 3.0, 3.0], &[0.1, 0.9, 1.0, 3.0, 0.2]),
            (&[2.0, 2.0, 2.0, 2.0], &[2.0, 2.0, 1.0, 3.0, 2.0, 2.0]),
        ];
        for (x, y) in cases {
            let (u, p) = mann_whitney_greater(x, y).unwrap();
            assert_eq!(u, brute_force_u(x, y));
            assert!(close(p, enumerated_p(x, y), 1e-12), "{x:?} {y:?}");
        }
    }

    #[test]
    fn separated_samples_are_significant() {
        let a: Vec<f64> = (1..=20).map(|i| 10.0 + 0.1 * i as f64).collect();
        let b: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
        let r = significance_test(&a, &b).unwrap();
        assert!(r.significant && r.p_value < 1e-3);
        assert_eq!(r.direction, Direction::AGreater);
        let r2 = significance_test(&b, &a).unwrap();
        assert_eq!(r2.direction, Direction::BGreater);
        assert_eq!(r.p_value, r2.p_value);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let a = [0.81, 0.84, 0.86, 0.83, 0.9, 0.85, 0.82, 0.88];
        let r = significance_test(&a, &a).unwrap();
        assert!(!r.significant && r.p_value >= 0.05);
    }

    #[test]
    fn welch_matches_hand_computation() {
        // means 3 and 1, variances 2.5 and 2.5, n = 5: t = 2 / sqrt(1) = 2,
        // df = 8.
        let (t, p) = welch_t_greater(&[1.0, 2.0, 3.0, 4.0, 5.0], &[-1.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(close(t, 2.0, 1e-12));
        let ref_p = 1.0 - StudentsT::new(0.0, 1.0, 8.0).unwrap().cdf(2.0);
        assert!(close(p, ref_p, 1e-12));
        assert!(p > 0.03 && p < 0.05);
    }

    #[test]
    fn mean_std_formatting() {
        assert_eq!(format_mean_std(0.8889, 0.0112), "0.889±.011");
        assert_eq!(format_mean_std(-0.25, 1.5), "-0.250±1.500");
        assert_eq!(mean_std(&[1.0, 3.0]), Some((2.0, 2f64.sqrt())));
    }
}
