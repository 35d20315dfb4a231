use rand::seq::SliceRandom;

use super::network::VbaNet;
use super::{Head, Target, TargetScale, TrainedModel, VbaNetConfig};
use crate::error::{Error, Result};
use crate::featurestream::SpatioTemporalMatrix;
use crate::scalar::Scalar;

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    m: Vec<F>,
    v: Vec<F>,
    step: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate: F::lit(learning_rate),
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            epsilon: F::lit(1e-7),
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [F], grad: &[F]) {
        self.step += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochOutcome {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based stopping on a monitored loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    /// Records the loss of `epoch`. `Stop` is returned on the `patience`-th
    /// consecutive epoch without improvement.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> EpochOutcome {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            EpochOutcome::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                EpochOutcome::Stop
            } else {
                EpochOutcome::NoImprovement
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

fn validate_targets<F: Scalar>(
    config: &VbaNetConfig,
    trials: &[(SpatioTemporalMatrix<F>, Target)],
) -> Result<Option<TargetScale>> {
    if trials.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    for (x, _) in trials {
        if x.channels() != config.in_channels {
            return Err(Error::arg(format!(
                "trial has {} channels, config expects {}",
                x.channels(),
                config.in_channels
            )));
        }
    }
    match config.head {
        Head::Classify { classes } => {
            let mut seen = vec![false; classes];
            for (_, t) in trials {
                match *t {
                    Target::Class(c) if c < classes => seen[c] = true,
                    other => return Err(Error::arg(format!("invalid classification target {other:?}"))),
                }
            }
            if seen.iter().filter(|&&s| s).count() < 2 {
                return Err(Error::arg("classification training set contains a single class"));
            }
            Ok(None)
        }
        Head::Regress => {
            let mut scores = Vec::with_capacity(trials.len());
            for (_, t) in trials {
                match *t {
                    Target::Score(s) if s.is_finite() => scores.push(s),
                    other => return Err(Error::arg(format!("invalid regression target {other:?}"))),
                }
            }
            Ok(TargetScale::fit(scores))
        }
    }
}

/// Trains with batch size one, reshuffling trial order each epoch, until the
/// epoch-mean training loss stops improving. Returns the best-epoch weights.
pub fn train<F: Scalar>(config: &VbaNetConfig, trials: &[(SpatioTemporalMatrix<F>, Target)]) -> Result<TrainedModel<F>> {
    let net = VbaNet::new(config)?;
    let scale = validate_targets(config, trials)?;
    let targets: Vec<Target> = trials
        .iter()
        .map(|(_, t)| match (*t, scale) {
            (Target::Score(s), Some(sc)) => Target::Score(sc.forward(s)),
            (t, _) => t,
        })
        .collect();

    let mut rng = crate::seed::rng(config.rng_seed);
    let mut params: Vec<F> = net.init(&mut rng);
    let mut best_params = params.clone();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut order: Vec<usize> = (0..trials.len()).collect();
    let mut history = Vec::new();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grad) = net.loss_and_grad(&params, &trials[i].0.data, targets[i])?;
            total += loss.as_f64();
            adam.update(&mut params, &grad);
        }
        let mean = total / trials.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        history.push(mean);
        match stopper.observe(epoch, mean) {
            // The monitored loss accumulates while the weights move, so the
            // snapshot is the state at the end of that epoch.
            EpochOutcome::Improved => best_params.clone_from(&params),
            EpochOutcome::NoImprovement => {}
            EpochOutcome::Stop => break,
        }
    }

    let best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok(TrainedModel::from_parts(
        config.clone(),
        &net,
        best_params,
        history,
        best_epoch,
        scale,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_stops_after_patience() {
        // Strictly decreasing for epochs 0..=4, flat from epoch 5.
        let losses = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let mut es = EarlyStopping::new(10, 0.0);
        let mut stopped_at = None;
        for (epoch, &l) in losses.iter().enumerate() {
            if es.observe(epoch, l) == EpochOutcome::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        let plateau_start = 5;
        assert_eq!(es.best_epoch(), Some(plateau_start - 1));
        assert_eq!(stopped_at, Some(plateau_start + 9));
    }

    #[test]
    fn min_delta_ignores_tiny_gains() {
        let mut es = EarlyStopping::new(2, 0.1);
        assert_eq!(es.observe(0, 1.0), EpochOutcome::Improved);
        assert_eq!(es.observe(1, 0.95), EpochOutcome::NoImprovement);
        assert_eq!(es.observe(2, 0.85), EpochOutcome::Improved);
        assert_eq!(es.best_epoch(), Some(2));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut adam = Adam::<f64>::new(2, 0.01);
        let mut p = vec![1.0, -1.0];
        adam.update(&mut p, &[3.0, -0.5]);
        // Bias-corrected first step moves each coordinate by ~lr·sign(g).
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] + 0.99).abs() < 1e-8);
    }
}
