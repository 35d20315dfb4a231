use ndarray::Array2;
use rand::Rng as _;

use super::network::VbaNet;
use super::{Target, VbaNetConfig};
use crate::error::Result;
use crate::seed::Rng;

const STEP: f64 = 1e-5;
const MIN_COORDS: usize = 256;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Indices to probe: every coordinate when there are few, otherwise
/// `MIN_COORDS` distinct coordinates chosen by `rng`.
fn probe_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= MIN_COORDS {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, MIN_COORDS).into_vec()
    }
}

/// Max relative error between a gradient and central differences of `loss`
/// over a subset of coordinates.
pub fn grad_check_params(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    rng: &mut Rng,
) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0_f64;
    for i in probe_indices(params.len(), rng) {
        let orig = p[i];
        p[i] = orig + STEP;
        let up = loss(&p);
        p[i] = orig - STEP;
        let down = loss(&p);
        p[i] = orig;
        let fd = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    worst
}

/// Checks the network gradient at a seeded initialization. Parameters that
/// start at zero (biases, gate outputs) are jittered so every path carries
/// signal.
pub fn grad_check(config: &VbaNetConfig, x: &Array2<f64>, target: Target) -> Result<f64> {
    let net = VbaNet::new(config)?;
    let mut rng = crate::seed::rng(config.rng_seed);
    let mut params: Vec<f64> = net.init(&mut rng);
    for p in params.iter_mut().filter(|p| **p == 0.0) {
        *p = rng.random_range(-0.2..0.2);
    }
    let (_, grad) = net.loss_and_grad(&params, x, target)?;
    // Shapes were validated by the analytic pass, so the loss cannot fail.
    let loss = |p: &[f64]| net.loss(p, x, target).unwrap_or(f64::NAN);
    Ok(grad_check_params(loss, &params, &grad, &mut rng))
}
